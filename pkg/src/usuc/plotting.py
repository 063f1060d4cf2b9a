"""Figures written next to the JSON reports of ``usuc eval`` and ``usuc bench``.

Uses the object-oriented matplotlib API (no pyplot state), so rendering is
safe from worker threads and never needs a display.
"""

from __future__ import annotations

import math
import os
from typing import Sequence

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from usuc.evaluation import EvalReport, ThroughputReport

_MAX_INTENT_BARS = 40


def _save(fig: Figure, path: str | os.PathLike) -> None:
    FigureCanvasAgg(fig)
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def plot_eval_report(report: EvalReport, path: str | os.PathLike, title: str | None = None) -> None:
    """Per-intent error rate bars, worst first, with the overall CER as a line."""
    rows = sorted(
        ((k, v["errors"] / v["total"]) for k, v in report.per_intent.items() if v["total"]),
        key=lambda kv: (-kv[1], kv[0]),
    )[:_MAX_INTENT_BARS]
    height = max(2.5, 0.28 * len(rows) + 1.2)
    fig = Figure(figsize=(7, height))
    ax = fig.add_subplot(1, 1, 1)
    labels = [k for k, _ in rows][::-1]
    rates = [r for _, r in rows][::-1]
    ax.barh(range(len(rows)), rates, color="#4C72B0")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.axvline(report.cer, color="#C44E52", linestyle="--", label=f"CER {report.cer:.3f}")
    ax.set_xlim(0, 1)
    ax.set_xlabel("error rate")
    ax.set_title(title or f"{report.config.get('strategy', '')}: {report.errors}/{report.total} errors")
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, path)


def plot_throughput(reports: Sequence[ThroughputReport], path: str | os.PathLike) -> None:
    """Utterances per second for each run on a log axis."""
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot(1, 1, 1)
    names = [r.config.get("strategy", f"run {i}") for i, r in enumerate(reports)]
    ups = [r.throughput_ups for r in reports]
    bars = ax.bar(range(len(reports)), ups, color="#55A868")
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels(names, fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("utterances / sec")
    for bar, v in zip(bars, ups):
        if math.isfinite(v):
            ax.annotate(f"{v:,.0f}", (bar.get_x() + bar.get_width() / 2, v), ha="center", va="bottom", fontsize=8)
    _save(fig, path)
