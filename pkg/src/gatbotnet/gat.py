"""Multi-head graph attention network for transductive node classification.

Each layer projects node features with a shared weight per head, scores every
edge ``j -> i`` (self-loop included) as
``LeakyReLU(a_dst . W h_i + a_src . W h_j)``, normalises those scores with a
softmax over the receiving node's neighbourhood and sums the projected
neighbour features with the resulting weights.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .autodiff import DenseLayer, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import DataError, DimensionError, NumericError
from .graph import KnnGraph
from .validation import check_features, check_index, check_labels

logger = logging.getLogger(__name__)


@dataclass
class GatLayerParams:
    """Weights of one attention layer, all heads stacked.

    ``weight`` is ``d_in x (heads * out_per_head)``; head ``h`` owns columns
    ``h*K:(h+1)*K``. ``att_dst`` and ``att_src`` are ``heads x K`` and together
    form each head's ``2K`` attention vector.
    """

    weight: Tensor
    att_dst: Tensor
    att_src: Tensor
    heads: int
    out_per_head: int
    negative_slope: float = 0.2
    combine: str = "concat"
    activation: str = "relu"

    def __post_init__(self):
        if self.heads < 1 or self.out_per_head < 1:
            raise ValueError("heads and out_per_head must be positive")
        if self.weight.shape[1] != self.heads * self.out_per_head:
            raise DimensionError(
                f"weight width {self.weight.shape[1]} != heads*K = {self.heads * self.out_per_head}"
            )
        for t in (self.att_dst, self.att_src):
            if t.shape != (self.heads, self.out_per_head):
                raise DimensionError(f"attention params must be {(self.heads, self.out_per_head)}, got {t.shape}")
        if self.combine not in ("concat", "mean"):
            raise ValueError(f"combine must be 'concat' or 'mean', got {self.combine!r}")
        for t in self.parameters():
            if not np.all(np.isfinite(t.data)):
                raise NumericError(f"non-finite GAT parameter {t.name}")

    @classmethod
    def init(cls, d_in: int, heads: int, out_per_head: int, rng: np.random.Generator,
             combine: str = "concat", activation: str = "relu", negative_slope: float = 0.2,
             name: str = "gat") -> "GatLayerParams":
        hk = heads * out_per_head
        weight = ad.glorot_uniform(rng, d_in, out_per_head, shape=(d_in, hk))
        att = ad.glorot_uniform(rng, 2 * out_per_head, 1, shape=(heads, 2 * out_per_head))
        return cls(
            Tensor(weight, requires_grad=True, name=f"{name}.weight"),
            Tensor(att[:, :out_per_head], requires_grad=True, name=f"{name}.att_dst"),
            Tensor(att[:, out_per_head:], requires_grad=True, name=f"{name}.att_src"),
            heads, out_per_head, negative_slope, combine, activation,
        )

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.heads * self.out_per_head if self.combine == "concat" else self.out_per_head

    def head_weight(self, head: int) -> np.ndarray:
        k = self.out_per_head
        return self.weight.data[:, head * k:(head + 1) * k]

    def attention_vector(self, head: int) -> np.ndarray:
        return np.concatenate([self.att_dst.data[head], self.att_src.data[head]])

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.att_dst, self.att_src]


@dataclass
class GatModel:
    layers: list[GatLayerParams]
    classifier_head: DenseLayer
    label_count: int

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.d_out != b.d_in:
                raise DimensionError(f"layer output width {a.d_out} does not feed input width {b.d_in}")
        if self.layers and self.layers[-1].d_out != self.classifier_head.d_in:
            raise DimensionError("last GAT layer width does not match the classifier head")
        if self.classifier_head.d_out != self.label_count:
            raise DimensionError("classifier head width must equal label_count")

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in if self.layers else self.classifier_head.d_in

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()] + self.classifier_head.parameters()


@dataclass
class RoleMasks:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        self.train_ids, self.val_ids, self.test_ids = (
            np.asarray(a, dtype=np.int64) for a in (self.train_ids, self.val_ids, self.test_ids)
        )

    def validate(self, node_count: int) -> None:
        allids = np.concatenate([self.train_ids, self.val_ids, self.test_ids])
        if allids.size != node_count or not np.array_equal(np.sort(allids), np.arange(node_count)):
            raise DataError("role masks must partition the graph's nodes without overlap")

    @classmethod
    def from_split(cls, split) -> "RoleMasks":
        return cls(split.train_ids, split.val_ids, split.test_ids)


# message passing ------------------------------------------------------------

@dataclass(frozen=True)
class AttentionEdges:
    """Receiver-sorted edge list with one self-loop leading each segment."""

    dst: np.ndarray
    src: np.ndarray
    offsets: np.ndarray
    node_count: int

    @classmethod
    def from_graph(cls, graph: KnnGraph) -> "AttentionEdges":
        n = graph.node_count
        deg = graph.degrees()
        offsets = np.concatenate([[0], np.cumsum(deg + 1)])
        src = np.empty(offsets[-1], dtype=np.int64)
        dst = np.repeat(np.arange(n), deg + 1)
        src[offsets[:-1]] = np.arange(n)
        mask = np.ones(offsets[-1], dtype=bool)
        mask[offsets[:-1]] = False
        src[mask] = graph.neighbors
        return cls(dst, src, offsets, n)


def _edges(graph) -> AttentionEdges:
    return graph if isinstance(graph, AttentionEdges) else AttentionEdges.from_graph(graph)


def attention_coefficients(h_i, h_neighbors, params: GatLayerParams, head: int) -> np.ndarray:
    """Attention weights of node ``i`` over ``[i, *neighbours]`` for one head."""
    h_i = np.asarray(h_i, dtype=np.float64)
    h_nb = np.asarray(h_neighbors, dtype=np.float64).reshape(-1, h_i.shape[0])
    W = params.head_weight(head)
    a = params.attention_vector(head)
    k = params.out_per_head
    wi = h_i @ W
    group = np.vstack([wi, h_nb @ W])
    logits = a[:k] @ wi + group @ a[k:]
    logits = np.where(logits > 0, logits, params.negative_slope * logits)
    e = np.exp(logits - logits.max())
    return e / e.sum()


def gat_layer_forward(features, graph, params: GatLayerParams, combine: str | None = None) -> Tensor:
    """One attention layer over ``graph`` (a :class:`KnnGraph` or prepared edges)."""
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise DimensionError(f"features {x.shape} do not match layer input width {params.d_in}")
    edges = _edges(graph)
    if x.shape[0] != edges.node_count:
        raise DimensionError(f"{x.shape[0]} feature rows for a {edges.node_count}-node graph")
    combine = combine or params.combine
    n, h, k = x.shape[0], params.heads, params.out_per_head
    wh = ad.reshape(ad.matmul(x, params.weight), (n, h, k))
    score_dst = ad.tsum(ad.mul(wh, params.att_dst), axis=2)
    score_src = ad.tsum(ad.mul(wh, params.att_src), axis=2)
    logits = ad.leaky_relu(
        ad.add(ad.take_rows(score_dst, edges.dst), ad.take_rows(score_src, edges.src)),
        params.negative_slope,
    )
    alpha = ad.segment_softmax(logits, edges.offsets)
    out = ad.neighbor_aggregate(alpha, wh, edges.src, edges.offsets)
    out = ad.reshape(out, (n, h * k)) if combine == "concat" else ad.mean(out, axis=1)
    return ad.activate(out, params.activation)


def layer_attention(features, graph, params: GatLayerParams) -> np.ndarray:
    """Edge attention weights ``(E + N, heads)`` in :class:`AttentionEdges` order."""
    x = check_features(features)
    edges = _edges(graph)
    wh = (x @ params.weight.data).reshape(x.shape[0], params.heads, params.out_per_head)
    s_dst = np.einsum("nhk,hk->nh", wh, params.att_dst.data)
    s_src = np.einsum("nhk,hk->nh", wh, params.att_src.data)
    logits = ad.leaky_relu(s_dst[edges.dst] + s_src[edges.src], params.negative_slope)
    return np.array(ad.segment_softmax(logits, edges.offsets).data)


def model_forward(model: GatModel, features, graph) -> Tensor:
    """Class logits for every node."""
    edges = _edges(graph)
    h = features if isinstance(features, Tensor) else Tensor(features)
    for layer in model.layers:
        h = gat_layer_forward(h, edges, layer)
    return ad.dense_forward(h, model.classifier_head)


# construction and training --------------------------------------------------

@dataclass
class GatConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    heads: int = 4
    out_per_head: int = 8
    n_layers: int = 2
    negative_slope: float = 0.2
    class_weight: bool = False


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    model: GatModel
    history: list[EpochRecord] = field(default_factory=list)
    initial_train_loss: float = float("nan")


def init_gat(d_in: int, label_count: int, config: GatConfig, rng: np.random.Generator) -> GatModel:
    """Hidden layers concatenate heads with ReLU; the last layer averages heads linearly."""
    layers = []
    width = d_in
    for i in range(config.n_layers):
        last = i == config.n_layers - 1
        layer = GatLayerParams.init(
            width, config.heads, config.out_per_head, rng,
            combine="mean" if last else "concat",
            activation="identity" if last else "relu",
            negative_slope=config.negative_slope, name=f"gat{i}",
        )
        layers.append(layer)
        width = layer.d_out
    head = DenseLayer.init(width, label_count, rng, name="classifier")
    return GatModel(layers, head, label_count)


def _class_weights(labels: np.ndarray, label_count: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=label_count).astype(np.float64)
    present = counts > 0
    w = np.zeros(label_count)
    w[present] = labels.size / (present.sum() * counts[present])
    return w


def _evaluate(logits: np.ndarray, labels: np.ndarray, ids: np.ndarray, weights) -> tuple[float, float]:
    if ids.size == 0:
        return float("nan"), float("nan")
    sw = None if weights is None else weights[labels[ids]]
    loss = ad.cross_entropy(logits[ids], labels[ids], sw).item()
    acc = float(np.mean(np.argmax(logits[ids], axis=1) == labels[ids]))
    return loss, acc


def train_gat(graph: KnnGraph, features, labels, masks: RoleMasks, config: GatConfig | None = None,
              label_count: int = 5) -> TrainResult:
    """Mini-batch training on target nodes with a full-graph forward pass per batch."""
    config = config or GatConfig()
    X = check_features(features)
    y = check_labels(labels, X.shape[0], label_count)
    if graph.node_count != X.shape[0]:
        raise DimensionError(f"graph has {graph.node_count} nodes but features have {X.shape[0]} rows")
    masks.validate(graph.node_count)
    train_ids = masks.train_ids
    missing = sorted(set(range(label_count)) - set(np.unique(y[train_ids]).tolist()))
    if missing:
        warnings.warn(f"classes {missing} are absent from the training split", stacklevel=2)
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
    model = init_gat(X.shape[1], label_count, config, init_rng)
    edges = AttentionEdges.from_graph(graph)
    weights = _class_weights(y[train_ids], label_count) if config.class_weight else None
    opt = ad.Adam(model.parameters(), lr=config.lr)

    logits = model_forward(model, X, edges).data
    result = TrainResult(model, initial_train_loss=_evaluate(logits, y, train_ids, weights)[0])
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(train_ids)
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            opt.zero_grad()
            with ad.Tape() as tape:
                out = model_forward(model, X, edges)
                sw = None if weights is None else weights[y[batch]]
                loss = ad.cross_entropy(ad.take_rows(out, batch), y[batch], sw)
            if not np.isfinite(loss.item()):
                raise NumericError(f"GAT loss became non-finite in epoch {epoch}")
            tape.backward(loss)
            opt.step()
        logits = model_forward(model, X, edges).data
        tl, ta = _evaluate(logits, y, train_ids, weights)
        vl, va = _evaluate(logits, y, masks.val_ids, weights)
        result.history.append(EpochRecord(epoch, tl, ta, vl, va))
        logger.info("gat epoch %d train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f",
                    epoch, tl, ta, vl, va)
    return result


def predict(model: GatModel, graph, features, node_ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Predicted class indices and class-probability rows for ``node_ids``."""
    X = check_features(features)
    edges = _edges(graph)
    ids = np.arange(X.shape[0]) if node_ids is None else check_index(node_ids, X.shape[0])
    logits = model_forward(model, X, edges)
    proba = np.array(ad.softmax_rows(logits.data[ids]).data)
    return np.argmax(proba, axis=1), proba


def write_history_csv(path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss), repr(r.val_acc)])


# persistence ----------------------------------------------------------------

def save_gat(model: GatModel, path) -> None:
    params = {}
    topo = []
    for i, layer in enumerate(model.layers):
        params[f"gat{i}.weight"] = layer.weight.data
        params[f"gat{i}.att_dst"] = layer.att_dst.data
        params[f"gat{i}.att_src"] = layer.att_src.data
        topo.append({
            "heads": layer.heads, "out_per_head": layer.out_per_head, "d_in": layer.d_in,
            "negative_slope": layer.negative_slope, "combine": layer.combine,
            "activation": layer.activation,
        })
    params["classifier.weight"] = model.classifier_head.weight.data
    params["classifier.bias"] = model.classifier_head.bias.data
    save_checkpoint(path, params, {"kind": "gat", "layers": topo, "label_count": model.label_count})


def load_gat(path) -> GatModel:
    params, meta = load_checkpoint(path)
    if meta.get("kind") != "gat":
        raise DataError(f"{path} does not hold a GAT checkpoint")
    layers = []
    for i, t in enumerate(meta["layers"]):
        layers.append(GatLayerParams(
            Tensor(params[f"gat{i}.weight"], requires_grad=True, name=f"gat{i}.weight"),
            Tensor(params[f"gat{i}.att_dst"], requires_grad=True, name=f"gat{i}.att_dst"),
            Tensor(params[f"gat{i}.att_src"], requires_grad=True, name=f"gat{i}.att_src"),
            t["heads"], t["out_per_head"], t["negative_slope"], t["combine"], t["activation"],
        ))
    head = DenseLayer(params["classifier.weight"], params["classifier.bias"], name="classifier")
    return GatModel(layers, head, int(meta["label_count"]))


# scikit-learn wrapper -------------------------------------------------------

class GATClassifier(ClassifierMixin, BaseEstimator):
    """Transductive GAT node classifier.

    ``fit`` and ``predict`` take the node features of the *whole* graph plus
    the graph itself; ``train_ids`` / ``val_ids`` / ``node_ids`` select roles.
    """

    def __init__(self, epochs=20, batch_size=128, lr=1e-3, heads=4, out_per_head=8, n_layers=2,
                 negative_slope=0.2, class_weight=False, n_classes=5, seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.heads = heads
        self.out_per_head = out_per_head
        self.n_layers = n_layers
        self.negative_slope = negative_slope
        self.class_weight = class_weight
        self.n_classes = n_classes
        self.seed = seed

    def fit(self, X, y, graph: KnnGraph, train_ids=None, val_ids=None):
        X = check_features(X)
        n = X.shape[0]
        train_ids = np.arange(n) if train_ids is None else check_index(train_ids, n)
        val_ids = np.array([], dtype=np.int64) if val_ids is None else check_index(val_ids, n)
        rest = np.setdiff1d(np.arange(n), np.concatenate([train_ids, val_ids]))
        config = GatConfig(self.epochs, self.batch_size, self.lr, self.seed, self.heads,
                           self.out_per_head, self.n_layers, self.negative_slope, self.class_weight)
        result = train_gat(graph, X, y, RoleMasks(train_ids, val_ids, rest), config, self.n_classes)
        self.model_ = result.model
        self.history_ = result.history
        self.classes_ = np.arange(self.n_classes)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X, graph: KnnGraph, node_ids=None):
        check_is_fitted(self, "model_")
        return predict(self.model_, graph, X, node_ids)[1]

    def predict(self, X, graph: KnnGraph, node_ids=None):
        check_is_fitted(self, "model_")
        return predict(self.model_, graph, X, node_ids)[0]

    def score(self, X, y, graph: KnnGraph, node_ids=None):
        pred = self.predict(X, graph, node_ids)
        y = np.asarray(y)
        if node_ids is not None and y.shape[0] != pred.shape[0]:
            y = y[np.asarray(node_ids)]
        return float(np.mean(pred == y))
