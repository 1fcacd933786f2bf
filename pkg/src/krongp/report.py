"""Benchmark and map reporting: text tables, CSV, and rendered figures.

Everything written here is deterministic for a given summary (no
timestamps), so repeated runs with the same seed produce identical
files.
"""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .experiment import ExperimentSummary


def render_benchmark_figure(summary: ExperimentSummary, path):
    """Bar chart of mean test r-squared per method with std error bars."""
    labels = [s.label for s in summary.methods]
    means = [s.mean_r2 for s in summary.methods]
    stds = [s.std_r2 for s in summary.methods]
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(labels), 4.0))
    pos = np.arange(len(labels))
    ax.bar(pos, means, yerr=stds, capsize=4, color="#4878a8", edgecolor="black")
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("test $r^2$ (mean over trials)")
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_title("held-out primary-task accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_map_figure(values, path, title="prediction", units=None):
    """Color render of a prediction raster; masked pixels drawn black."""
    data = np.ma.masked_invalid(np.asarray(values, dtype=float))
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("black")
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(data, cmap=cmap, interpolation="nearest")
    bar = fig.colorbar(im, ax=ax)
    bar.set_label(units or "predicted value")
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_benchmark_outputs(summary: ExperimentSummary, out_dir) -> dict:
    """Summary table (text + CSV), per-trial records, and the figure."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "text": os.path.join(out_dir, "summary.txt"),
        "csv": os.path.join(out_dir, "summary.csv"),
        "trials": os.path.join(out_dir, "trials.jsonl"),
        "figure": os.path.join(out_dir, "summary.png"),
    }
    with open(paths["text"], "w") as fh:
        fh.write(summary.to_text())
    with open(paths["csv"], "w") as fh:
        fh.write(summary.to_csv())
    summary.write_reports_jsonl(paths["trials"])
    render_benchmark_figure(summary, paths["figure"])
    return paths
