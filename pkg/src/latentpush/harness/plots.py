"""SVG plots derived from result CSVs. Display only; numbers never flow back."""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .results import ResultTable  # noqa: E402


def _numeric_suffix(name: str) -> float:
    m = re.search(r"(\d+(?:\.\d+)?)$", name)
    return float(m.group(1)) if m else float("nan")


def plot_metric_curve(table: ResultTable, metric: str, out_path: str | Path,
                      xlabel: str = "", ylabel: str = "", title: str = "",
                      logx: bool = False) -> Path:
    """Line plot of `metric` across experiments named <prefix><number>."""
    xs, ys, errs = [], [], []
    for exp in table.experiments():
        rows = [r for r in table.rows
                if r["experiment"] == exp and r["metric"] == metric]
        if not rows:
            continue
        x = _numeric_suffix(exp)
        if x != x:  # nan: non-numeric experiment name (e.g. "trend")
            continue
        xs.append(x)
        ys.append(rows[0]["value"])
        errs.append(rows[0]["stderr"])
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    xs = [xs[i] for i in order]
    ys = [ys[i] for i in order]
    errs = [errs[i] for i in order]

    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel or metric)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def plot_bar(table: ResultTable, metric: str, out_path: str | Path,
             ylabel: str = "", title: str = "") -> Path:
    names, vals, errs = [], [], []
    for exp in table.experiments():
        rows = [r for r in table.rows
                if r["experiment"] == exp and r["metric"] == metric]
        if rows and rows[0]["value"] == rows[0]["value"]:
            names.append(exp)
            vals.append(rows[0]["value"])
            errs.append(rows[0]["stderr"])
    fig, ax = plt.subplots(figsize=(max(5, 0.9 * len(names)), 3.4))
    ax.bar(range(len(names)), vals, yerr=errs, capsize=3)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel or metric)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path
