"""End-to-end runs: reduce -> build graph -> train GAT -> evaluate."""

from __future__ import annotations

import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import data as dio
from .dimred import ReducerKind, load_reducer, make_reducer, save_reducer
from .evaluation import (CostInputs, classification_report, cost_estimate, grid_configs,
                         grid_report)
from .exceptions import ConfigError, GatBotnetError
from .gat import GatConfig, RoleMasks, predict, save_gat, train_gat, write_history_csv
from .graph import KnnGraph, Metric, build_knn_graph, graph_stats

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "GATBOTNET_OUT"
ALLOWED_K = (3, 5)


@dataclass
class PipelineConfig:
    input: str | None = None
    label_column: str = "Label"
    synth_n: int = 10_000
    synth_dim: int = 84
    synth_separation: float = 2.0
    reducer: str = "vae"
    latent_dim: int = 8
    k: int = 3
    metric: str = "euclidean"
    epochs: int = 20
    batch: int = 128
    lr: float = 0.001
    seed: int = 0
    out: str | None = None
    allow_any_k: bool = False
    class_weight: bool = False
    stratify: bool = False

    def __post_init__(self):
        self.reducer = ReducerKind.parse(self.reducer).value
        self.metric = Metric.parse(self.metric).value
        if self.k not in ALLOWED_K and not self.allow_any_k:
            raise ConfigError(f"k={self.k} is outside {ALLOWED_K}; pass allow_any_k to override")
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        for name in ("latent_dim", "epochs", "batch", "synth_n", "synth_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.out is None:
            self.out = os.environ.get(OUTPUT_ROOT_ENV, "runs")

    @classmethod
    def from_sources(cls, path=None, **overrides) -> "PipelineConfig":
        """Merge a key-value config file with explicit overrides (which win)."""
        values = {}
        if path is not None:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path} must hold key: value pairs")
            values.update({str(k).replace("-", "_"): v for k, v in loaded.items()})
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def cell_name(self) -> str:
        return f"{self.reducer}_{self.k}_{self.metric}"


@dataclass
class RunResult:
    out_dir: Path
    report: object
    timings: dict = field(default_factory=dict)


class StageError(GatBotnetError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage '{stage}' failed: {cause}")


@contextmanager
def _stage(name: str, timings: dict):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - start
        logger.info("stage %s took %.2fs", name, timings[name])


def load_dataset(config: PipelineConfig) -> dio.FlowDataset:
    if config.input:
        return dio.load_netflow_csv(config.input, label_column=config.label_column)
    return dio.synth_blobs(config.synth_n, dim=config.synth_dim, separation=config.synth_separation,
                           seed=config.seed)


@dataclass
class Prepared:
    """Scaled features and the shared split, reusable across grid cells."""

    dataset: dio.FlowDataset
    split: dio.Split
    scaled: np.ndarray


def prepare(config: PipelineConfig, timings: dict) -> Prepared:
    with _stage("load", timings):
        dataset = load_dataset(config)
    with _stage("split", timings):
        split = dio.split(dataset, dio.SplitSpec(seed=config.seed, stratify=config.stratify))
        scaler = dio.fit_scaler(dataset.features[split.train_ids])
        scaled = scaler.transform(dataset.features)
    return Prepared(dataset, split, scaled)


def fit_reduce(config: PipelineConfig, prepared: Prepared, timings: dict):
    with _stage("reduce", timings):
        est = make_reducer(config.reducer, latent_dim=config.latent_dim, epochs=config.epochs,
                           batch_size=config.batch, lr=config.lr, seed=config.seed)
        est.fit(prepared.scaled[prepared.split.train_ids])
        return est.model_, est.transform(prepared.scaled)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_cell(config: PipelineConfig, prepared: Prepared, reducer_model, latent: np.ndarray,
             out_dir: Path, timings: dict) -> RunResult:
    """Graph, train and evaluate one (reducer, k, metric) cell on prepared data."""
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = prepared.dataset.labels
    split = prepared.split
    split.save(out_dir / "split.json")
    _write_json(out_dir / "config.resolved.json", config.to_dict())
    save_reducer(reducer_model, out_dir / "reducer.ckpt")
    dio.write_reduced_csv(out_dir / "reduced.csv", latent, labels)

    with _stage("graph", timings):
        graph = build_knn_graph(latent, config.k, config.metric)
        graph.save(out_dir / "graph.knng")
    with _stage("train", timings):
        gat_cfg = GatConfig(epochs=config.epochs, batch_size=config.batch, lr=config.lr,
                            seed=config.seed, class_weight=config.class_weight)
        result = train_gat(graph, latent, labels, RoleMasks.from_split(split), gat_cfg,
                           label_count=len(prepared.dataset.label_names))
        save_gat(result.model, out_dir / "model.ckpt")
        write_history_csv(out_dir / "history.csv", result.history)
    with _stage("eval", timings):
        pred, _ = predict(result.model, graph, latent, split.test_ids)
        report = classification_report(labels[split.test_ids], pred, len(prepared.dataset.label_names),
                                       prepared.dataset.label_names)
        doc = report.to_dict()
        doc["config"] = {"reducer": config.reducer, "k": config.k, "metric": config.metric, "seed": config.seed}
        doc["graph"] = graph_stats(graph).as_dict()
        doc["cost"] = cost_estimate(config.reducer, cost_inputs_for(config, prepared, graph, reducer_model)).to_dict()
        doc["split_sizes"] = {"train": int(split.train_ids.size), "val": int(split.val_ids.size),
                              "test": int(split.test_ids.size)}
        _write_json(out_dir / "report.json", doc)
        (out_dir / "report.txt").write_text(report.to_text() + "\n")
    _write_json(out_dir / "timings.json", timings)
    return RunResult(out_dir, report, timings)


def cost_inputs_for(config: PipelineConfig, prepared: Prepared, graph: KnnGraph, reducer_model) -> CostInputs:
    n, d_raw = prepared.scaled.shape
    gat = GatConfig()
    return CostInputs(
        N=n, D=config.latent_dim, E=graph_stats(graph).edge_count, C=config.latent_dim,
        K=gat.out_per_head, H=gat.heads, n=gat.n_layers, a=2, b=2,
        d_in=d_raw, d_out=32,
    )


def run_pipeline(config: PipelineConfig, config_file=None) -> RunResult:
    timings: dict = {}
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config_file is not None:
        (out_dir / "config.source").write_text(Path(config_file).read_text())
    prepared = prepare(config, timings)
    model, latent = fit_reduce(config, prepared, timings)
    return run_cell(config, prepared, model, latent, out_dir, timings)


@dataclass
class GridResult:
    out_dir: Path
    summary: object
    reports: dict
    failures: dict
    failure_codes: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        """0 when every cell ran; otherwise the most severe cell exit code."""
        return max(self.failure_codes.values(), default=0)


def run_grid(config: PipelineConfig, config_file=None) -> GridResult:
    """All 3 reducers x 4 (k, metric) cells on one shared split."""
    root = Path(config.out)
    root.mkdir(parents=True, exist_ok=True)
    if config_file is not None:
        (root / "config.source").write_text(Path(config_file).read_text())
    timings: dict = {}
    prepared = prepare(config, timings)
    prepared.split.save(root / "split.json")
    reports, failures, codes = {}, {}, {}
    reduced: dict = {}
    for reducer, k, metric in grid_configs():
        cell_cfg = PipelineConfig(**{**config.to_dict(), "reducer": reducer.value, "k": k,
                                     "metric": metric.value})
        cell_timings = dict(timings)
        key = (reducer.value, k, metric.value)
        try:
            if reducer not in reduced:
                reduced[reducer] = fit_reduce(cell_cfg, prepared, cell_timings)
            model, latent = reduced[reducer]
            result = run_cell(cell_cfg, prepared, model, latent, root / cell_cfg.cell_name, cell_timings)
            reports[key] = result.report
        except GatBotnetError as exc:
            logger.error("grid cell %s failed: %s", cell_cfg.cell_name, exc)
            failures[key] = str(exc)
            codes[key] = exc.exit_code
    summary = grid_report(reports, allow_failed=failures.keys())
    (root / "grid_summary.csv").write_text(summary.to_csv())
    (root / "grid_summary.txt").write_text(summary.to_text() + "\n")
    _write_json(root / "grid.json", {
        "best": list(summary.best) if summary.best else None,
        "observation": summary.observation(),
        "failed": {f"{r}_{k}_{m}": msg for (r, k, m), msg in failures.items()},
        "rows": summary.rows,
    })
    return GridResult(root, summary, reports, failures, codes)


def load_artifacts(out_dir):
    """Reload the reducer, graph and reduced data written by a run."""
    out_dir = Path(out_dir)
    latent, labels = dio.read_reduced_csv(out_dir / "reduced.csv")
    return {
        "reducer": load_reducer(out_dir / "reducer.ckpt"),
        "graph": KnnGraph.load(out_dir / "graph.knng"),
        "latent": latent,
        "labels": labels,
        "split": dio.Split.load(out_dir / "split.json"),
    }
