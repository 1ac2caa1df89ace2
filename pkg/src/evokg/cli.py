"""Command-line entry points: train, eval, report, stats.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every train/eval run writes a manifest (config snapshot, dataset
fingerprint, seed, version, phase timings) that its artifacts reference.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .data import (DataError, add_inverse_quadruples, build_static_graph,
                   load_directory)
from .evaluation import evaluate
from .model import ParameterSet  # noqa: F401  (re-exported for scripts)
from .reporting import (plot_metric_bars, plot_per_timestamp, plot_timings,
                        plot_training_curve, read_metric_csv, write_breakdown_json,
                        write_curve_csv, write_metric_csv, write_summary_markdown)
from .tensor import GradientError
from .training import (NumericError, TrainConfig, fit, load_checkpoint,
                       save_checkpoint)

log = logging.getLogger("evokg")

DATA_ROOT_ENV = "EVOKG_DATA"

# per-dataset defaults: history length and GCN depth
DATASET_DEFAULTS = {
    "icews18": (6, 2),
    "icews14": (3, 2),
    "icews0515": (10, 2),
    "wiki": (2, 2),
    "yago": (1, 1),
    "gdelt": (1, 2),
}
FALLBACK_HISTORY, FALLBACK_LAYERS = 3, 2


class UsageError(ValueError):
    """Bad flag combinations caught before any compute."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dataset_key(data_dir: str) -> str:
    base = os.path.basename(os.path.normpath(data_dir)).lower()
    return "".join(c for c in base if c.isalnum())


def resolve_data_dir(spec: str) -> str:
    if os.path.isdir(spec):
        return spec
    root = os.environ.get(DATA_ROOT_ENV)
    if root:
        candidate = os.path.join(root, spec)
        if os.path.isdir(candidate):
            return candidate
    raise DataError(
        f"dataset directory {spec!r} not found (also looked under ${DATA_ROOT_ENV})"
    )


def dataset_fingerprint(data_dir: str) -> str:
    digest = hashlib.sha256()
    for name in sorted(os.listdir(data_dir)):
        path = os.path.join(data_dir, name)
        if name.endswith(".txt") and os.path.isfile(path):
            digest.update(name.encode())
            with open(path, "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()[:16]


def version_string() -> str:
    try:
        sha = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        ).stdout.strip()
        if sha:
            return f"{__version__}+g{sha}"
    except Exception:
        pass
    return __version__


def build_manifest(config: dict, fingerprint: str, seed: int) -> dict:
    manifest = {
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": config,
        "dataset_fingerprint": fingerprint,
        "seed": seed,
        "version": version_string(),
        "timings": {},
    }
    raw = json.dumps({k: manifest[k] for k in ("config", "dataset_fingerprint", "seed")},
                     sort_keys=True)
    manifest["manifest_id"] = hashlib.sha256(raw.encode()).hexdigest()[:12]
    return manifest


def write_manifest(out_dir: str, manifest: dict) -> str:
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True, help="dataset directory or name under $%s" % DATA_ROOT_ENV)
    p.add_argument("--out", default="runs/train", help="output directory")
    p.add_argument("--dim", type=int, default=200, help="embedding dimension")
    p.add_argument("--layers", type=int, default=None,
                   help="GCN layers (default: per-dataset, else %d)" % FALLBACK_LAYERS)
    p.add_argument("--history", type=int, default=None,
                   help="history window length m (default: per-dataset, else %d)" % FALLBACK_HISTORY)
    p.add_argument("--gamma", type=float, default=10.0, help="angle pace in degrees")
    p.add_argument("--lambda1", type=float, default=0.7, help="entity loss weight")
    p.add_argument("--lambda2", type=float, default=0.3, help="relation loss weight")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--dropout", type=float, default=0.2, help="GCN dropout rate")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task", choices=("entity", "relation", "both"), default="both")
    p.add_argument("--kernels", type=int, default=50, help="decoder kernel count")
    p.add_argument("--kernel-width", type=int, default=3, help="decoder kernel width")
    p.add_argument("--grad-clip", type=float, default=1.0,
                   help="global gradient-norm clip (0 disables)")
    p.add_argument("--patience", type=int, default=5,
                   help="early-stopping patience in epochs (0 disables)")
    static = p.add_mutually_exclusive_group()
    static.add_argument("--static", dest="static", action="store_true", default=None,
                        help="require the static-graph constraint")
    static.add_argument("--no-static", dest="static", action="store_false",
                        help="disable the static-graph constraint")
    p.add_argument("--no-time-gate", dest="time_gate", action="store_false",
                   default=True, help="replace the time gate with direct carry-over")


def cmd_train(args) -> int:
    data_dir = resolve_data_dir(args.data)
    key = _dataset_key(data_dir)
    history, layers = DATASET_DEFAULTS.get(key, (FALLBACK_HISTORY, FALLBACK_LAYERS))
    if args.history is not None:
        history = args.history
    if args.layers is not None:
        layers = args.layers

    timings = {}
    t0 = time.perf_counter()
    store = load_directory(data_dir)
    has_names = store.entity_names is not None
    if args.static is True and not has_names:
        raise UsageError(
            "--static requested but the dataset has no entity2id.txt names file"
        )
    use_static = has_names if args.static is None else args.static
    static_graph = build_static_graph(store.entity_names) if use_static else None
    store = add_inverse_quadruples(store)
    timings["load"] = time.perf_counter() - t0

    config = TrainConfig(
        dim=args.dim, num_layers=layers, history=history, gamma=args.gamma,
        lambda1=args.lambda1, lambda2=args.lambda2, lr=args.lr,
        dropout=args.dropout, epochs=args.epochs, seed=args.seed,
        task=args.task, use_static=use_static, time_gate=args.time_gate,
        grad_clip=args.grad_clip, patience=args.patience,
        decoder_kernels=args.kernels, decoder_width=args.kernel_width,
    )
    os.makedirs(args.out, exist_ok=True)
    manifest = build_manifest(asdict(config), dataset_fingerprint(data_dir),
                              args.seed)
    manifest["data_dir"] = os.path.abspath(data_dir)

    t0 = time.perf_counter()
    result = fit(store, static_graph, config)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    meta = {
        "num_entities": store.num_entities,
        "num_relations": store.num_relations,
        "num_relation_slots": store.num_relation_slots,
        "dataset": key,
    }
    ckpt_path = os.path.join(args.out, "checkpoint.evkg")
    save_checkpoint(ckpt_path, config, result.pset, result.opt,
                    result.final_state, meta=meta,
                    manifest_id=manifest["manifest_id"])
    write_curve_csv(os.path.join(args.out, "curve.csv"), result.curve,
                    include_static=use_static)
    timings["save"] = time.perf_counter() - t0
    manifest["timings"] = timings
    manifest["best_epoch"] = result.best_epoch
    manifest["best_valid_mrr"] = result.best_valid_mrr
    write_manifest(args.out, manifest)
    log.info("wrote %s", ckpt_path)
    return 0


def _add_eval_flags(p: argparse.ArgumentParser):
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="runs/eval")
    p.add_argument("--mode", choices=("frozen", "gt", "ground_truth"),
                   default="frozen")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--task", choices=("entity", "relation", "both"),
                   default="entity")
    p.add_argument("--filtered", action="store_true",
                   help="also rank with known answers removed (diagnostic only)")


def cmd_eval(args) -> int:
    data_dir = resolve_data_dir(args.data)
    timings = {}
    t0 = time.perf_counter()
    if not os.path.isfile(args.checkpoint):
        raise DataError(f"missing checkpoint: {args.checkpoint}")
    config, pset, _opt, final_state, header = load_checkpoint(args.checkpoint)
    store = add_inverse_quadruples(load_directory(data_dir))
    meta = header["meta"]
    if (store.num_entities != meta["num_entities"]
            or store.num_relation_slots != meta["num_relation_slots"]):
        raise DataError(
            "checkpoint/config dimension mismatch: checkpoint was trained on "
            f"|V|={meta['num_entities']}, 2|R|={meta['num_relation_slots']} but the "
            f"dataset has |V|={store.num_entities}, 2|R|={store.num_relation_slots}"
        )
    timings["load"] = time.perf_counter() - t0

    manifest = build_manifest(asdict(config), dataset_fingerprint(data_dir),
                              config.seed)
    manifest["checkpoint"] = os.path.abspath(args.checkpoint)
    mode = "ground_truth" if args.mode in ("gt", "ground_truth") else "frozen"
    tasks = ("entity", "relation") if args.task == "both" else (args.task,)

    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    rows = []
    for task in tasks:
        report = evaluate(store, pset, final_state, mode=mode, split=args.split,
                          task=task, config=config, filtered=args.filtered)
        rows.append({"task": task, "split": args.split, "mode": mode,
                     **report.as_row(), "manifest": manifest["manifest_id"]})
        write_breakdown_json(
            os.path.join(args.out, f"eval_{task}_{args.split}_{mode}.json"),
            task, args.split, mode, report, manifest["manifest_id"])
        log.info("%s/%s/%s: MRR %.4f H@1 %.4f H@3 %.4f H@10 %.4f",
                 task, args.split, mode, report.mrr, report.hits1,
                 report.hits3, report.hits10)
    timings["evaluate"] = time.perf_counter() - t0
    write_metric_csv(os.path.join(args.out, "metrics.csv"), rows)
    manifest["timings"] = timings
    write_manifest(args.out, manifest)
    return 0


def cmd_report(args) -> int:
    inputs = [p for p in args.inputs if p]
    if not inputs:
        raise UsageError("report needs at least one input file")
    os.makedirs(args.out, exist_ok=True)
    metric_rows, breakdowns, plots = [], [], []
    for path in inputs:
        if not os.path.isfile(path):
            raise DataError(f"report input not found: {path}")
        name = os.path.basename(path)
        if name.endswith(".json") and name.startswith("eval"):
            with open(path, encoding="utf-8") as fh:
                breakdowns.append(json.load(fh))
        elif name == "manifest.json":
            with open(path, encoding="utf-8") as fh:
                manifest = json.load(fh)
            out = os.path.join(args.out, "timings.svg")
            plot_timings(manifest, out)
            plots.append(out)
        elif name.endswith(".csv") and "curve" in name:
            out = os.path.join(args.out, "training_curve.svg")
            plot_training_curve(path, out)
            plots.append(out)
        elif name.endswith(".csv"):
            metric_rows.extend(read_metric_csv(path))
        else:
            raise UsageError(f"cannot classify report input: {path}")
    if metric_rows:
        out = os.path.join(args.out, "metrics.svg")
        plot_metric_bars(metric_rows, out)
        plots.append(out)
    if breakdowns:
        out = os.path.join(args.out, "per_timestamp_mrr.svg")
        plot_per_timestamp(breakdowns, out)
        plots.append(out)
    write_summary_markdown(os.path.join(args.out, "summary.md"),
                           metric_rows, plots)
    log.info("wrote %d plots to %s", len(plots), args.out)
    return 0


def cmd_stats(args) -> int:
    data_dir = resolve_data_dir(args.data)
    store = load_directory(data_dir)
    counts = {split: store.num_base_facts(split)
              for split in ("train", "valid", "test")}
    print(f"entities:   {store.num_entities}")
    print(f"relations:  {store.num_relations}")
    for split, n in counts.items():
        print(f"{split} facts: {n}")
    print(f"snapshots:  {len(store.timeline)} (interval {store.interval})")
    if store.entity_names is not None:
        graph = build_static_graph(store.entity_names)
        print(f"static property entities: {graph.num_static_entities}")
        print(f"static edges:             {graph.num_edges}")
    if args.expect:
        expected = [int(x) for x in args.expect.split(",")]
        actual = [store.num_entities, store.num_relations,
                  counts["train"], counts["valid"], counts["test"]]
        if expected != actual[:len(expected)]:
            raise DataError(f"stats mismatch: expected {expected}, got {actual}")
        print("expectations met")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evokg",
                     description="temporal knowledge graph forecasting")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="rank a split with a trained checkpoint")
    _add_eval_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_report = sub.add_parser("report", help="render SVG plots and a summary table")
    p_report.add_argument("inputs", nargs="*", help="curve/metric CSVs, eval JSONs, manifest.json")
    p_report.add_argument("--out", default="runs/report")
    p_report.set_defaults(func=cmd_report)

    p_stats = sub.add_parser("stats", help="print dataset statistics")
    p_stats.add_argument("--data", required=True)
    p_stats.add_argument("--expect",
                         help="comma-separated expected |V|,|R|,train,valid,test counts")
    p_stats.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, GradientError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
