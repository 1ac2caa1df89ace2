"""Report files and batch plots: metric CSVs, per-timestamp JSON breakdowns,
training-curve CSVs, SVG charts, and a markdown summary table."""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import MetricReport  # noqa: E402
from .training import EpochStats  # noqa: E402

METRIC_FIELDS = ("task", "split", "mode", "mrr", "hits1", "hits3", "hits10",
                 "count", "manifest")


def write_metric_csv(path: str, rows: list[dict]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in METRIC_FIELDS})


def read_metric_csv(path: str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_breakdown_json(path: str, task: str, split: str, mode: str,
                         report: MetricReport, manifest_id: str | None):
    payload = {
        "manifest": manifest_id,
        "task": task,
        "split": split,
        "mode": mode,
        "overall": report.as_row(),
        "per_timestamp": report.per_timestamp,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_curve_csv(path: str, curve: list[EpochStats], include_static: bool):
    fields = ["epoch", "entity_loss", "relation_loss"]
    if include_static:
        fields.append("static_loss")
    fields += ["total_loss", "valid_mrr", "seconds"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for st in curve:
            row = [st.epoch, st.entity_loss, st.relation_loss]
            if include_static:
                row.append(st.static_loss)
            row += [st.total_loss,
                    "" if st.valid_mrr is None else st.valid_mrr,
                    st.seconds]
            writer.writerow(row)


def _save(fig, path: str):
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_training_curve(curve_csv: str, out_path: str):
    with open(curve_csv, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{curve_csv}: empty training curve")
    epochs = [int(r["epoch"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("total_loss", "entity_loss", "relation_loss", "static_loss"):
        if key in rows[0]:
            ax.plot(epochs, [float(r[key]) for r in rows], label=key.replace("_", " "))
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if any(r.get("valid_mrr") for r in rows):
        ax2 = ax.twinx()
        pts = [(e, float(r["valid_mrr"])) for e, r in zip(epochs, rows) if r["valid_mrr"]]
        ax2.plot(*zip(*pts), color="black", linestyle="--", label="valid MRR")
        ax2.set_ylabel("valid MRR")
    ax.legend(loc="upper right")
    ax.set_title("training curve")
    _save(fig, out_path)


def plot_metric_bars(metric_rows: list[dict], out_path: str):
    if not metric_rows:
        raise ValueError("no metric rows to plot")
    labels = [f"{r['task']}/{r['split']}/{r['mode']}" for r in metric_rows]
    metrics = ("mrr", "hits1", "hits3", "hits10")
    fig, ax = plt.subplots(figsize=(max(6, 1.5 * len(labels)), 4))
    width = 0.8 / len(metrics)
    for j, metric in enumerate(metrics):
        xs = [i + j * width for i in range(len(labels))]
        ax.bar(xs, [float(r[metric]) for r in metric_rows], width=width,
               label=metric.upper() if metric == "mrr" else f"Hits@{metric[4:]}")
    ax.set_xticks([i + 1.5 * width for i in range(len(labels))])
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("ranking metrics")
    fig.tight_layout()
    _save(fig, out_path)


def plot_per_timestamp(breakdowns: list[dict], out_path: str):
    fig, ax = plt.subplots(figsize=(7, 4))
    for bd in breakdowns:
        ts = [row["timestamp"] for row in bd["per_timestamp"]]
        mrr = [row["mrr"] for row in bd["per_timestamp"]]
        ax.plot(ts, mrr, marker="o",
                label=f"{bd['task']}/{bd['split']}/{bd['mode']}")
    ax.set_xlabel("snapshot")
    ax.set_ylabel("MRR")
    ax.legend()
    ax.set_title("per-timestamp MRR")
    _save(fig, out_path)


def plot_timings(manifest: dict, out_path: str):
    timings = manifest.get("timings", {})
    if not timings:
        raise ValueError("manifest has no timing section")
    phases = sorted(timings)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(phases)), [timings[p] for p in phases])
    ax.set_xticks(range(len(phases)))
    ax.set_xticklabels(phases)
    ax.set_ylabel("seconds")
    ax.set_title("phase timings")
    _save(fig, out_path)


def write_summary_markdown(path: str, metric_rows: list[dict],
                           plots: list[str]):
    lines = ["# Run summary", ""]
    if metric_rows:
        lines += ["| task | split | mode | MRR | Hits@1 | Hits@3 | Hits@10 | queries |",
                  "|---|---|---|---|---|---|---|---|"]
        for r in metric_rows:
            lines.append(
                "| {task} | {split} | {mode} | {mrr:.4f} | {h1:.4f} | {h3:.4f} "
                "| {h10:.4f} | {count} |".format(
                    task=r["task"], split=r["split"], mode=r["mode"],
                    mrr=float(r["mrr"]), h1=float(r["hits1"]),
                    h3=float(r["hits3"]), h10=float(r["hits10"]),
                    count=r["count"]))
        lines.append("")
    if plots:
        lines.append("## Plots")
        lines += [f"- [{os.path.basename(p)}]({os.path.basename(p)})" for p in plots]
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
