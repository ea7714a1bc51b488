"""Command-line entry point: ``gatbotnet <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import data as dio
from .dimred import make_reducer, save_reducer
from .evaluation import CostInputs, classification_report, cost_estimate, cost_table
from .exceptions import ConfigError, GatBotnetError
from .gat import GatConfig, RoleMasks, load_gat, predict, save_gat, train_gat, write_history_csv
from .graph import KnnGraph, build_knn_graph, graph_stats
from .pipeline import ALLOWED_K, OUTPUT_ROOT_ENV, PipelineConfig, run_grid, run_pipeline

logger = logging.getLogger("gatbotnet")


def _common(p: argparse.ArgumentParser, *, training=True, graph=False, reducer=False,
            defaults=True) -> None:
    # pipeline/grid leave defaults unset so a --config file is not masked
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--input", help="input file (CSV)")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV} or ./runs)")
    p.add_argument("--seed", type=int, default=d(0))
    if reducer:
        p.add_argument("--reducer", choices=["ae", "vae", "pca"], default=d("vae"))
        p.add_argument("--latent-dim", type=int, default=d(8))
        p.add_argument("--label-column", default=d("Label"))
    if graph:
        p.add_argument("--k", type=int, default=d(3), help="neighbours per node (3 or 5)")
        p.add_argument("--metric", choices=["euclidean", "cosine"], default=d("euclidean"))
        p.add_argument("--allow-any-k", action="store_true", default=d(False),
                       help="permit k outside {3, 5}")
    if training:
        p.add_argument("--epochs", type=int, default=d(20))
        p.add_argument("--batch", type=int, default=d(128))
        p.add_argument("--lr", type=float, default=d(0.001))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatbotnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic imbalanced flow corpus as CSV")
    p.add_argument("--out", required=True, help="CSV path to write")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--dim", type=int, default=84)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("reduce", help="split, scale and reduce a corpus to the latent space")
    _common(p, reducer=True)
    p.add_argument("--synth-n", type=int, default=10_000)
    p.add_argument("--synth-separation", type=float, default=2.0)
    p.add_argument("--stratify", action="store_true")

    p = sub.add_parser("graph", help="build the kNN graph over reduced.csv")
    _common(p, training=False, graph=True)
    p.add_argument("--edge-csv", action="store_true", help="also write edges.csv")

    p = sub.add_parser("train", help="train the GAT on a reduced dataset and graph")
    _common(p)
    p.add_argument("--graph", help="graph.knng (default: next to --input)")
    p.add_argument("--split", help="split.json (default: next to --input)")
    p.add_argument("--class-weight", action="store_true")

    p = sub.add_parser("eval", help="evaluate a trained GAT on the test ids")
    _common(p, training=False)
    p.add_argument("--graph")
    p.add_argument("--split")
    p.add_argument("--model")

    for name, text in (("pipeline", "run reduce -> graph -> train -> eval"),
                       ("grid", "run all 12 reducer x (k, metric) cells")):
        p = sub.add_parser(name, help=text)
        _common(p, reducer=True, graph=True, defaults=False)
        p.add_argument("--config", help="YAML key: value file; flags override it")
        p.add_argument("--synth-n", type=int)
        p.add_argument("--synth-dim", type=int)
        p.add_argument("--synth-separation", type=float)
        p.add_argument("--class-weight", action="store_true", default=None)
        p.add_argument("--stratify", action="store_true", default=None)

    p = sub.add_parser("cost", help="print abstract operation counts for each reducer")
    defaults = {"N": 1000, "D": 8, "E": 3000, "C": 8, "K": 8, "H": 4, "n": 2, "a": 2, "b": 2,
                "d-in": 84, "d-out": 32}
    for flag, value in defaults.items():
        p.add_argument(f"--{flag}", type=int, default=value)
    p.add_argument("--no-reducer", action="store_true", help="drop the reduction term")
    p.add_argument("--json", action="store_true")
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sibling(explicit, input_path, name) -> Path:
    if explicit:
        return Path(explicit)
    if not input_path:
        raise ConfigError(f"cannot locate {name}: pass it explicitly or --input")
    return Path(input_path).parent / name


def cmd_synth(args) -> int:
    ds = dio.synth_blobs(args.n, dim=args.dim, separation=args.separation, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ds.to_csv(args.out)
    print(json.dumps(ds.class_counts()))
    return 0


def cmd_reduce(args) -> int:
    out = _out_dir(args)
    if args.input:
        ds = dio.load_netflow_csv(args.input, label_column=args.label_column)
        print(f"rows in {ds.rows_in}, kept {ds.rows_kept}, dropped {ds.rows_dropped}")
    else:
        ds = dio.synth_blobs(args.synth_n, separation=args.synth_separation, seed=args.seed)
    split = dio.split(ds, dio.SplitSpec(seed=args.seed, stratify=args.stratify))
    scaled = dio.fit_scaler(ds.features[split.train_ids]).transform(ds.features)
    est = make_reducer(args.reducer, latent_dim=args.latent_dim, epochs=args.epochs,
                       batch_size=args.batch, lr=args.lr, seed=args.seed)
    est.fit(scaled[split.train_ids])
    latent = est.transform(scaled)
    split.save(out / "split.json")
    save_reducer(est.model_, out / "reducer.ckpt")
    dio.write_reduced_csv(out / "reduced.csv", latent, ds.labels)
    if args.reducer == "pca":
        print(est.model_.variance_report())
    print(f"wrote {out / 'reduced.csv'}")
    return 0


def _check_k(args) -> None:
    if args.k not in ALLOWED_K and not args.allow_any_k:
        raise ConfigError(f"k={args.k} is outside {ALLOWED_K}; pass --allow-any-k to override")


def cmd_graph(args) -> int:
    _check_k(args)
    if not args.input:
        raise ConfigError("graph needs --input reduced.csv")
    latent, _ = dio.read_reduced_csv(args.input)
    out = Path(args.out) if args.out else Path(args.input).parent
    out.mkdir(parents=True, exist_ok=True)
    graph = build_knn_graph(latent, args.k, args.metric)
    graph.save(out / "graph.knng")
    if args.edge_csv:
        graph.to_edge_csv(out / "edges.csv")
    print(json.dumps(graph_stats(graph).as_dict()))
    return 0


def cmd_train(args) -> int:
    if not args.input:
        raise ConfigError("train needs --input reduced.csv")
    latent, labels = dio.read_reduced_csv(args.input)
    graph = KnnGraph.load(_sibling(args.graph, args.input, "graph.knng"))
    split = dio.Split.load(_sibling(args.split, args.input, "split.json"))
    out = Path(args.out) if args.out else Path(args.input).parent
    out.mkdir(parents=True, exist_ok=True)
    cfg = GatConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed,
                    class_weight=args.class_weight)
    result = train_gat(graph, latent, labels, RoleMasks.from_split(split), cfg)
    save_gat(result.model, out / "model.ckpt")
    write_history_csv(out / "history.csv", result.history)
    last = result.history[-1]
    print(f"epoch {last.epoch}: train_acc {last.train_acc:.4f} val_acc {last.val_acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    if not args.input:
        raise ConfigError("eval needs --input reduced.csv")
    latent, labels = dio.read_reduced_csv(args.input)
    graph = KnnGraph.load(_sibling(args.graph, args.input, "graph.knng"))
    split = dio.Split.load(_sibling(args.split, args.input, "split.json"))
    model = load_gat(_sibling(args.model, args.input, "model.ckpt"))
    pred, _ = predict(model, graph, latent, split.test_ids)
    report = classification_report(labels[split.test_ids], pred, model.label_count)
    out = Path(args.out) if args.out else Path(args.input).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    print(report.to_text())
    return 0


def _pipeline_config(args) -> PipelineConfig:
    keys = ("input", "out", "seed", "reducer", "latent_dim", "k", "metric", "epochs", "batch", "lr",
            "label_column", "synth_n", "synth_dim", "synth_separation", "class_weight", "stratify",
            "allow_any_k")
    return PipelineConfig.from_sources(args.config, **{k: getattr(args, k) for k in keys})


def cmd_pipeline(args) -> int:
    config = _pipeline_config(args)
    result = run_pipeline(config, args.config)
    print(result.report.to_text())
    print(f"artifacts in {result.out_dir}")
    return 0


def cmd_grid(args) -> int:
    config = _pipeline_config(args)
    result = run_grid(config, args.config)
    print(result.summary.to_text())
    if result.failures:
        print(f"{len(result.failures)} grid cells failed", file=sys.stderr)
        return result.exit_code
    return 0


def cmd_cost(args) -> int:
    values = {"N": args.N, "D": args.D, "E": args.E, "C": args.C, "K": args.K, "H": args.H,
              "n": args.n, "a": args.a, "b": args.b, "d_in": args.d_in, "d_out": args.d_out}
    inputs = CostInputs(**values)
    if args.json:
        rows = [cost_estimate(m, inputs, include_reducer=not args.no_reducer).to_dict()
                for m in ("ae", "vae", "pca")]
        print(json.dumps(rows, indent=2))
    elif args.no_reducer:
        for m in ("ae", "vae", "pca"):
            est = cost_estimate(m, inputs, include_reducer=False)
            print(f"{m:<4} total {est.total}")
    else:
        print(cost_table(inputs))
    return 0


COMMANDS = {
    "synth": cmd_synth, "reduce": cmd_reduce, "graph": cmd_graph, "train": cmd_train,
    "eval": cmd_eval, "pipeline": cmd_pipeline, "grid": cmd_grid, "cost": cmd_cost,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except GatBotnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
