"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Operations executed inside an active :class:`Tape` are recorded in execution
order, which is already a topological order of the computation. Calling
:meth:`Tape.backward` walks that list in reverse and accumulates gradients
into every leaf tensor created with ``requires_grad=True``.

    >>> w = Tensor([[2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> tape.backward(loss)
    >>> w.grad
    array([[4.]])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionError, NumericError

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # freshly computed op outputs are not shared, so skip the defensive copy
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.data, t.requires_grad, t.grad, t.name = arr, requires_grad, None, None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes record into the innermost one.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that contributed to ``loss``.

    Gradients accumulate (``+=``) into existing buffers, so callers zero them
    between optimisation steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    produced = {id(node.output) for node in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, ig in zip(node.inputs, node.backward(g)):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
            if key not in produced:
                leaves[key] = inp
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, needs)
    if needs and _ACTIVE_TAPES:
        _ACTIVE_TAPES[-1].record(Node(inputs, out, grad_fn, op))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise arithmetic -----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _emit(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _emit(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _emit(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a, low: float, high: float) -> Tensor:
    """Clamp to ``[low, high]``; gradient passes only where the input is inside."""
    a = _as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    return _emit("clip", np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


# reductions and shape -------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", out, (a,), grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return _emit(
        "matmul",
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def take_rows(a, index) -> Tensor:
    """Gather ``a[index]`` along axis 0; the backward pass scatter-adds."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def grad_fn(g):
        flat = g.reshape(len(index), -1)
        out = np.zeros((a.shape[0], flat.shape[1]))
        for col in range(flat.shape[1]):
            out[:, col] = np.bincount(index, weights=flat[:, col], minlength=a.shape[0])
        return (out.reshape(a.shape),)

    return _emit("take_rows", a.data[index], (a,), grad_fn)


# segment operations over contiguous row groups ------------------------------
# ``offsets`` is a CSR-style boundary array: segment s spans rows
# offsets[s]:offsets[s+1]. Every segment must be non-empty.

def _check_offsets(offsets: np.ndarray, rows: int) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets[0] != 0 or offsets[-1] != rows:
        raise DimensionError(f"offsets span [{offsets[0]}, {offsets[-1]}] but input has {rows} rows")
    if np.any(np.diff(offsets) <= 0):
        raise ValueError("segment operations require non-empty segments")
    return offsets


def segment_sum(a, offsets) -> Tensor:
    a = _as_tensor(a)
    offsets = _check_offsets(offsets, a.shape[0])
    lengths = np.diff(offsets)
    out = np.add.reduceat(a.data, offsets[:-1], axis=0)
    return _emit("segment_sum", out, (a,), lambda g: (np.repeat(g, lengths, axis=0),))


def segment_softmax(a, offsets) -> Tensor:
    """Softmax over each segment independently, per trailing column."""
    a = _as_tensor(a)
    offsets = _check_offsets(offsets, a.shape[0])
    lengths = np.diff(offsets)
    seg_max = np.maximum.reduceat(a.data, offsets[:-1], axis=0)
    e = np.exp(a.data - np.repeat(seg_max, lengths, axis=0))
    denom = np.add.reduceat(e, offsets[:-1], axis=0)
    out = e / np.repeat(denom, lengths, axis=0)

    def grad_fn(g):
        dot = np.add.reduceat(g * out, offsets[:-1], axis=0)
        return (out * (g - np.repeat(dot, lengths, axis=0)),)

    return _emit("segment_softmax", out, (a,), grad_fn)


def neighbor_aggregate(weights, values, src, offsets) -> Tensor:
    """Weighted neighbour sum ``out[i, h] = sum_e weights[e, h] * values[src[e], h]``.

    Edges ``e`` of receiver ``i`` occupy ``offsets[i]:offsets[i+1]``.
    ``weights`` is ``(E, H)`` and ``values`` is ``(N, H, K)``. Each head is one
    CSR sparse-dense product, which avoids materialising ``(E, H, K)`` messages.
    """
    weights, values = _as_tensor(weights), _as_tensor(values)
    src = np.asarray(src, dtype=np.int64)
    offsets = _check_offsets(offsets, weights.shape[0])
    n, heads, _ = values.shape
    if weights.shape != (src.size, heads) or offsets.size != n + 1:
        raise DimensionError(
            f"weights {weights.shape}, {src.size} edges and values {values.shape} are inconsistent"
        )
    mats = [sp.csr_matrix((weights.data[:, h], src, offsets), shape=(n, n)) for h in range(heads)]
    out = np.stack([mats[h] @ values.data[:, h, :] for h in range(heads)], axis=1)
    lengths = np.diff(offsets)

    def grad_fn(g):
        g_values = np.stack([mats[h].T @ g[:, h, :] for h in range(heads)], axis=1)
        g_weights = (np.repeat(g, lengths, axis=0) * values.data[src]).sum(axis=2)
        return g_weights, g_values

    return _emit("neighbor_aggregate", out, (weights, values), grad_fn)


# activations and losses -----------------------------------------------------

def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite value in {what} input")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    _check_finite(a.data, "relu")
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, negative_slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    slope = np.where(a.data > 0, 1.0, negative_slope)
    return _emit("leaky_relu", a.data * slope, (a,), lambda g: (g * slope,))


def softmax_rows(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows expects a rank-2 input, got shape {a.shape}")
    _check_finite(a.data, "softmax")
    e = np.exp(a.data - a.data.max(axis=1, keepdims=True))
    out = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _emit("softmax_rows", out, (a,), grad_fn)


def log_softmax_rows(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"log_softmax_rows expects a rank-2 input, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def grad_fn(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _emit("log_softmax_rows", out, (a,), grad_fn)


def activate(a, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "softmax_rows":
        return softmax_rows(a)
    if kind in ("identity", "linear", None):
        return _as_tensor(a)
    raise ValueError(f"unknown activation {kind!r}")


def cross_entropy(logits, targets, sample_weight=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row-softmax logits.

    With ``sample_weight`` the mean is weighted: sum(w * nll) / sum(w).
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} do not match targets {targets.shape}")
    n, c = logits.shape
    if n == 0:
        raise ValueError("cross_entropy over an empty batch")
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), targets] = -w / w.sum()
    return tsum(mul(log_softmax_rows(logits), onehot))


def mse(pred, target) -> Tensor:
    """Elementwise mean squared error."""
    return mean(square(sub(pred, target)))


def sum_squared_error(pred, target) -> Tensor:
    """Per-row sum of squared errors, averaged over rows."""
    pred = _as_tensor(pred)
    return mul(tsum(square(sub(pred, target))), 1.0 / pred.shape[0])


# layers and initialisation --------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class DenseLayer:
    """Affine map ``x @ weight + bias``."""

    def __init__(self, weight, bias, name: str = "dense"):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[0] < 1 or weight.shape[1] < 1:
            raise DimensionError(f"dense weight must be a non-empty matrix, got {weight.shape}")
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"bias shape {bias.shape} does not match weight {weight.shape}")
        self.name = name
        self.weight = Tensor(weight, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(bias, requires_grad=True, name=f"{name}.bias")

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, name: str = "dense") -> "DenseLayer":
        return cls(glorot_uniform(rng, d_in, d_out), np.zeros(d_out), name=name)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x) -> Tensor:
        return dense_forward(x, self)

    def __repr__(self) -> str:
        return f"DenseLayer({self.d_in} -> {self.d_out}, name={self.name!r})"


def dense_forward(x, layer: DenseLayer) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 2 or x.shape[1] != layer.d_in:
        raise DimensionError(
            f"input shape {x.shape} does not match layer weight shape {layer.weight.shape}"
        )
    return add(matmul(x, layer.weight), layer.bias)


def mlp_forward(x, layers: Sequence[DenseLayer], hidden: str = "relu") -> Tensor:
    """Dense stack with ``hidden`` activation between layers and a linear output."""
    h = _as_tensor(x)
    for i, layer in enumerate(layers):
        h = dense_forward(h, layer)
        if i < len(layers) - 1:
            h = activate(h, hidden)
    return h


# optimiser ------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


class Adam:
    """Adam with bias correction over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(
            lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
            first_moment=[np.zeros(p.shape) for p in self.params],
            second_moment=[np.zeros(p.shape) for p in self.params],
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in self.params]
        adam_step(self.params, grads, self.state)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place and advance ``state``."""
    if not state.first_moment:
        state.first_moment = [np.zeros(p.shape) for p in params]
        state.second_moment = [np.zeros(p.shape) for p in params]
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise DimensionError("parameter, gradient and moment lists differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.first_moment[i].shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.name or i} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name or i}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data = Tensor._wrap(p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon), False).data
