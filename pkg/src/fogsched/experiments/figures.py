"""Figure rendering for the report paths. Headless backend only."""

from __future__ import annotations

from typing import Dict, Sequence, Tuple

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_YLABEL = {
    "load_balance": "load-balance cost",
    "response_time": "response time (ms)",
    "weighted": "weighted cost (normalized)",
}


def render_convergence(path: str, series: Dict[str, np.ndarray],
                       objective: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, ys in series.items():
        ax.plot(np.arange(len(ys)), ys, label=label, linewidth=1.2)
    ax.set_xlabel("policy update")
    ax.set_ylabel(_YLABEL.get(objective, "cost"))
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_overhead(path: str, rows: Sequence[Tuple[str, float, float]]) -> None:
    """Bar chart of per-decision latency with 95% CI whiskers.

    ``rows`` are (algorithm, mean_ms, ci95_ms).
    """
    labels = [r[0] for r in rows]
    means = [r[1] for r in rows]
    errs = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.bar(range(len(rows)), means, yerr=errs, capsize=4, color="#5b8db8")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels)
    ax.set_ylabel("per-decision latency (ms)")
    ax.set_yscale("log")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
