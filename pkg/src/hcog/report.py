"""Run reports: figures and summary tables from a run directory.

Reads the manifest and per-step metrics a run leaves behind and renders
matplotlib figures (per-stage guidance residual curves, kernel bookkeeping)
next to a delimited summary, so a run can be assessed without re-executing
anything.
"""

from __future__ import annotations

import csv
import json
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

__all__ = ["load_metrics", "write_report"]


def load_metrics(metrics_path) -> list[dict]:
    rows = []
    with open(metrics_path, "r", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "stage": int(row["stage"]),
                    "kind": row["kind"],
                    "block": row["block"],
                    "part": row["part"],
                    "step": int(row["step"]),
                    "metric": row["metric"],
                    "value": float(row["value"]),
                }
            )
    return rows


def _stage_label(row: dict) -> str:
    label = f"{row['stage']:02d} {row['kind']}"
    if row["block"] not in ("", "None", None):
        label += f" b{row['block']}"
    if row["part"]:
        label += f" {row['part']}"
    return label


def write_report(run_dir, out_dir=None) -> dict:
    """Render report figures and summary.csv for a finished or partial run.

    Returns a summary dict (also serialized as JSON) with per-stage loss
    statistics and final kernel counts.
    """
    run_dir = str(run_dir)
    out_dir = str(out_dir) if out_dir is not None else run_dir
    os.makedirs(out_dir, exist_ok=True)

    manifest_path = os.path.join(run_dir, "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)

    metrics_path = os.path.join(run_dir, "metrics.csv")
    rows = load_metrics(metrics_path) if os.path.exists(metrics_path) else []

    residuals: dict[str, list[tuple[int, float]]] = defaultdict(list)
    counters: dict[str, float] = {}
    for row in rows:
        if row["metric"].startswith("residual_"):
            residuals[_stage_label(row)].append((row["step"], row["value"]))
        else:
            counters[f"{_stage_label(row)} {row['metric']}"] = row["value"]

    # residual curves per optimization stage
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    for label, series in sorted(residuals.items()):
        series.sort()
        steps = [s for s, _ in series]
        values = [v for _, v in series]
        ax.plot(steps, values, label=label, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("mean squared guidance residual")
    ax.set_yscale("log")
    if residuals:
        ax.legend(fontsize=7, loc="upper right")
    ax.set_title("per-stage guidance residuals")
    fig.tight_layout()
    residual_fig = os.path.join(out_dir, "report_residuals.png")
    fig.savefig(residual_fig, dpi=130)
    plt.close(fig)

    # stage timeline / status overview
    stages = manifest.get("stages", [])
    fig, ax = plt.subplots(figsize=(7.5, 0.45 * max(len(stages), 4) + 1))
    for i, entry in enumerate(stages):
        color = {"done": "tab:green", "failed": "tab:red"}.get(entry["status"], "tab:orange")
        ax.barh(i, 1.0, color=color, alpha=0.7)
        label = entry["kind"]
        if entry.get("block") is not None:
            label += f" b{entry['block']}"
        if entry.get("part"):
            label += f" {entry['part']}"
        ax.text(0.02, i, f"{entry['index']:02d} {label} [{entry['status']}]", va="center", fontsize=8)
    ax.set_yticks([])
    ax.set_xticks([])
    ax.invert_yaxis()
    ax.set_title(f"stages (finished={manifest.get('finished', False)})")
    fig.tight_layout()
    stage_fig = os.path.join(out_dir, "report_stages.png")
    fig.savefig(stage_fig, dpi=130)
    plt.close(fig)

    summary_rows = []
    for label, series in sorted(residuals.items()):
        values = [v for _, v in sorted(series)]
        summary_rows.append(
            {
                "stage": label,
                "first_residual": values[0],
                "last_residual": values[-1],
                "reduction": 1.0 - values[-1] / values[0] if values[0] else 0.0,
            }
        )
    summary_csv = os.path.join(out_dir, "report_summary.csv")
    with open(summary_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["stage", "first_residual", "last_residual", "reduction"])
        writer.writeheader()
        writer.writerows(summary_rows)

    summary = {
        "run_dir": run_dir,
        "finished": manifest.get("finished", False),
        "stages_done": sum(1 for e in stages if e["status"] == "done"),
        "stages_total": len(stages),
        "counters": counters,
        "figures": [os.path.basename(residual_fig), os.path.basename(stage_fig)],
        "summary_csv": os.path.basename(summary_csv),
    }
    with open(os.path.join(out_dir, "report_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary
