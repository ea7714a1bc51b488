import numpy as np
import pytest

from gatbotnet.autodiff import Tape


def numeric_gradient(loss_fn, param, h=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``param``."""
    base = np.array(param.data)
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        for sign in (1, -1):
            bumped = base.copy()
            bumped[idx] += sign * h
            param.data = bumped
            grad[idx] += sign * loss_fn().item()
    param.data = base
    return grad / (2 * h)


def rel_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return float(np.linalg.norm(a - b) / denom)


def gradient_errors(loss_fn, params, h=1e-5):
    """Relative error between tape gradients and finite differences, per parameter."""
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    out = {}
    for i, p in enumerate(params):
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        out[p.name or f"param{i}"] = rel_error(analytic, numeric_gradient(loss_fn, p, h))
    return out


@pytest.fixture
def grad_check():
    return gradient_errors


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("GATBOTNET_OUT", str(tmp_path / "runs"))
    return tmp_path
