"""Classification metrics, the analytic pipeline cost model and grid summaries."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import LABEL_NAMES
from .dimred import ReducerKind
from .exceptions import ConfigError, IncompleteGridError
from .graph import Metric
from .validation import check_labels


@dataclass
class ClassificationReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray
    precision_degenerate: np.ndarray
    recall_degenerate: np.ndarray
    label_names: tuple[str, ...] = LABEL_NAMES

    @property
    def macro_avg(self) -> dict[str, float]:
        return {m: float(np.mean(getattr(self, m))) for m in ("precision", "recall", "f1")}

    @property
    def weighted_avg(self) -> dict[str, float]:
        total = self.support.sum()
        w = self.support / total if total else np.zeros_like(self.support, dtype=float)
        return {m: float(np.sum(w * getattr(self, m))) for m in ("precision", "recall", "f1")}

    def to_dict(self) -> dict:
        classes = {}
        for i, name in enumerate(self.label_names):
            classes[name] = {
                "precision": float(self.precision[i]),
                "recall": float(self.recall[i]),
                "f1": float(self.f1[i]),
                "support": int(self.support[i]),
                "precision_degenerate": bool(self.precision_degenerate[i]),
                "recall_degenerate": bool(self.recall_degenerate[i]),
            }
        return {
            "accuracy": float(self.accuracy),
            "classes": classes,
            "macro_avg": self.macro_avg,
            "weighted_avg": self.weighted_avg,
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        width = max(12, max(len(n) for n in self.label_names) + 2)
        lines = [f"{'':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>10}"]
        for i, name in enumerate(self.label_names):
            flag = "*" if self.precision_degenerate[i] or self.recall_degenerate[i] else " "
            lines.append(
                f"{name:<{width}}{self.precision[i]:>10.4f}{self.recall[i]:>10.4f}"
                f"{self.f1[i]:>10.4f}{int(self.support[i]):>10d}{flag}"
            )
        lines.append("")
        total = int(self.support.sum())
        for label, avg in (("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)):
            lines.append(f"{label:<{width}}{avg['precision']:>10.4f}{avg['recall']:>10.4f}{avg['f1']:>10.4f}{total:>10d}")
        lines.append(f"{'accuracy':<{width}}{self.accuracy:>40.4f}")
        if self.precision_degenerate.any() or self.recall_degenerate.any():
            lines.append("* zero denominator; metric reported as 0.0")
        return "\n".join(lines)


def confusion_matrix(y_true, y_pred, label_count: int = 5) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    return np.bincount(
        np.asarray(y_true) * label_count + np.asarray(y_pred), minlength=label_count * label_count
    ).reshape(label_count, label_count)


def classification_report(y_true, y_pred, label_count: int = 5,
                          label_names=None) -> ClassificationReport:
    y_true = check_labels(y_true, n_classes=label_count)
    y_pred = check_labels(y_pred, len(y_true), n_classes=label_count)
    if y_true.size == 0:
        raise ValueError("classification_report needs at least one sample")
    cm = confusion_matrix(y_true, y_pred, label_count)
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1)
    p_deg = pred_pos == 0
    r_deg = support == 0
    precision = np.divide(tp, pred_pos, out=np.zeros(label_count), where=~p_deg)
    recall = np.divide(tp, support, out=np.zeros(label_count), where=~r_deg)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(label_count), where=denom > 0)
    if label_names is None:
        label_names = LABEL_NAMES if label_count == len(LABEL_NAMES) else tuple(f"class_{i}" for i in range(label_count))
    return ClassificationReport(
        accuracy=float(tp.sum() / cm.sum()),
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        confusion=cm,
        precision_degenerate=p_deg,
        recall_degenerate=r_deg,
        label_names=tuple(label_names),
    )


# cost model -----------------------------------------------------------------

@dataclass(frozen=True)
class CostInputs:
    """Size parameters of one pipeline run.

    N nodes, D node feature width, E edges, C principal components,
    K per-head output width, H heads, n GAT layers, a/b encoder/decoder dense
    layer counts, and d_in/d_out a representative dense layer shape.
    """

    N: int = 0
    D: int = 0
    E: int = 0
    C: int = 0
    K: int = 0
    H: int = 0
    n: int = 0
    a: int = 0
    b: int = 0
    d_in: int = 0
    d_out: int = 0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) != value or value < 0:
                raise ConfigError(f"cost input {name} must be a non-negative integer, got {value}")

    @property
    def c(self) -> int:
        return self.a + self.b


@dataclass(frozen=True)
class CostEstimate:
    method: ReducerKind
    reducer_cost: int
    graph_cost: int
    gat_cost: int

    @property
    def total(self) -> int:
        return self.reducer_cost + self.graph_cost + self.gat_cost

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "reducer_cost": self.reducer_cost,
            "graph_cost": self.graph_cost,
            "gat_cost": self.gat_cost,
            "total": self.total,
        }


def cost_estimate(method, inputs: CostInputs, include_reducer: bool = True) -> CostEstimate:
    """Leading-constant-free operation counts for reduce + graph + GAT stages."""
    method = ReducerKind.parse(method)
    q = inputs
    if not include_reducer:
        reducer = 0
    elif method is ReducerKind.PCA:
        reducer = q.N * q.D * q.C
    else:
        reducer = q.c * q.d_in * q.d_out
        if method is ReducerKind.VAE_ENCODER:
            reducer += 1  # latent sampling
    graph = q.N * q.D**2 + q.E * q.D
    gat = q.n * (q.N * q.D * q.K + q.H * q.E * q.K)
    return CostEstimate(method, int(reducer), int(graph), int(gat))


def cost_table(inputs: CostInputs) -> str:
    rows = [cost_estimate(m, inputs) for m in ReducerKind]
    header = f"{'stage':<10}" + "".join(f"{m.value:>16}" for m in ReducerKind)
    lines = [header]
    for attr in ("reducer_cost", "graph_cost", "gat_cost", "total"):
        label = attr.replace("_cost", "")
        lines.append(f"{label:<10}" + "".join(f"{getattr(r, attr):>16d}" for r in rows))
    return "\n".join(lines)


# grid -----------------------------------------------------------------------

GRID_NEIGHBORHOODS = ((3, Metric.EUCLIDEAN), (5, Metric.EUCLIDEAN), (3, Metric.COSINE), (5, Metric.COSINE))


def grid_configs() -> list[tuple[ReducerKind, int, Metric]]:
    return [(r, k, m) for r in ReducerKind for k, m in GRID_NEIGHBORHOODS]


def _grid_key(key) -> tuple[ReducerKind, int, Metric]:
    r, k, m = key
    return ReducerKind.parse(r), int(k), Metric.parse(m)


@dataclass
class GridSummary:
    rows: list[dict] = field(default_factory=list)
    best: tuple | None = None
    label_names: tuple[str, ...] = LABEL_NAMES
    failed: list[tuple] = field(default_factory=list)

    def metric_means(self) -> dict[str, float]:
        out = {}
        for metric in Metric:
            accs = [r["accuracy"] for r in self.rows if r["metric"] == metric.value and r["accuracy"] is not None]
            out[metric.value] = float(np.mean(accs)) if accs else float("nan")
        return out

    def observation(self) -> str:
        means = self.metric_means()
        e, c = means["euclidean"], means["cosine"]
        relation = ">=" if e >= c else "<"
        return f"mean accuracy euclidean {e:.4f} {relation} cosine {c:.4f}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["reducer", "k", "metric", "accuracy"] + [f"f1_{n}" for n in self.label_names] + ["best"])
        for r in self.rows:
            acc = "" if r["accuracy"] is None else repr(r["accuracy"])
            f1 = ["" if v is None else repr(v) for v in r["f1"]]
            w.writerow([r["reducer"], r["k"], r["metric"], acc] + f1 + [int(r["best"])])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'reducer':<8}{'k':>3}  {'metric':<10}{'accuracy':>10}  " + " ".join(f"{n[:10]:>10}" for n in self.label_names)]
        for r in self.rows:
            acc = "FAILED" if r["accuracy"] is None else f"{r['accuracy']:.4f}"
            f1 = " ".join(f"{'-' if v is None else format(v, '.4f'):>10}" for v in r["f1"])
            mark = "  <- best" if r["best"] else ""
            lines.append(f"{r['reducer']:<8}{r['k']:>3}  {r['metric']:<10}{acc:>10}  {f1}{mark}")
        lines.append(self.observation())
        return "\n".join(lines)


def grid_report(results: dict, allow_failed=()) -> GridSummary:
    """Tabulate accuracy and per-class F1 for all 12 (reducer, k, metric) cells.

    ``results`` maps ``(reducer, k, metric)`` to a :class:`ClassificationReport`.
    Cells listed in ``allow_failed`` appear as failed rows instead of raising.
    """
    reports = {_grid_key(k): v for k, v in results.items()}
    failed = {_grid_key(k) for k in allow_failed}
    missing = [(r.value, k, m.value) for r, k, m in grid_configs() if (r, k, m) not in reports and (r, k, m) not in failed]
    if missing:
        raise IncompleteGridError(missing)
    summary = GridSummary()
    best_acc = -1.0
    for cfg in grid_configs():
        r, k, m = cfg
        rep = reports.get(cfg)
        if rep is None:
            summary.failed.append((r.value, k, m.value))
            row = {"reducer": r.value, "k": k, "metric": m.value, "accuracy": None,
                   "f1": [None] * len(summary.label_names), "best": False}
        else:
            summary.label_names = rep.label_names
            row = {"reducer": r.value, "k": k, "metric": m.value, "accuracy": float(rep.accuracy),
                   "f1": [float(v) for v in rep.f1], "best": False}
            if rep.accuracy > best_acc:
                best_acc = rep.accuracy
                summary.best = (r.value, k, m.value)
        summary.rows.append(row)
    for row in summary.rows:
        row["best"] = summary.best == (row["reducer"], row["k"], row["metric"])
    return summary
