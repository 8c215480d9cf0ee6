"""Per-update metrics records and their CSV persistence.

One record per policy update. ``cost`` is the objective-specific per-update
mean: the raw load-balance or response-time mean for single objectives, and
for the weighted objective a min-max normalized combination computed after
the run over the run's own update series (a fixed scale; the per-decision
running normalizer the agents train against is not comparable across runs).
``union_weighted_series`` recomputes the weighted cost over the union scale
of several runs so different algorithms can share one axis.

The wall-clock column is real measured time and therefore not reproducible;
``stable_lines`` drops it for bit-identity comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence

import numpy as np

from ..domain import CostWeights

METRICS_HEADER = "update,cost,reward_mean,success_rate,lb_cost,rt_cost,wall_ms_per_decision"


@dataclass
class MetricsRecord:
    update: int
    cost: float
    reward_mean: float
    success_rate: float
    lb_cost: float
    rt_cost: float
    wall_ms_per_decision: float

    def csv_line(self) -> str:
        return ",".join([
            str(self.update),
            repr(float(self.cost)), repr(float(self.reward_mean)),
            repr(float(self.success_rate)), repr(float(self.lb_cost)),
            repr(float(self.rt_cost)), repr(float(self.wall_ms_per_decision)),
        ])


def write_metrics(path: str, records: Sequence[MetricsRecord]) -> None:
    """Append-only semantics: indices must be strictly increasing."""
    last = -1
    for rec in records:
        if rec.update <= last:
            raise ValueError(f"update indices must increase: {rec.update} after {last}")
        last = rec.update
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_line() + "\n")


def read_metrics(path: str) -> List[MetricsRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path}: unexpected metrics header")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 7:
            raise ValueError(f"{path}: malformed row {ln!r}")
        out.append(MetricsRecord(int(parts[0]), *[float(x) for x in parts[1:]]))
    return out


def stable_lines(path: str) -> List[str]:
    """File lines with the wall-clock column cut off, for determinism checks."""
    with open(path, "r", encoding="utf-8") as fh:
        return [ln.rstrip("\n").rsplit(",", 1)[0] for ln in fh if ln.strip()]


def _minmax_norm(values: np.ndarray) -> np.ndarray:
    """Min-max over the finite entries; a degenerate range maps to zeros."""
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return np.full_like(values, np.nan)
    lo, hi = float(finite.min()), float(finite.max())
    if hi <= lo:
        return np.where(np.isfinite(values), 0.0, np.nan)
    return (values - lo) / (hi - lo)


def finalize_weighted_cost(records: Sequence[MetricsRecord],
                           weights: CostWeights) -> None:
    """Fill ``cost`` in place from the run's own lb/rt series."""
    lb = np.array([r.lb_cost for r in records], dtype=float)
    rt = np.array([r.rt_cost for r in records], dtype=float)
    cost = weights.w1 * _minmax_norm(lb) + weights.w2 * _minmax_norm(rt)
    for rec, c in zip(records, cost):
        rec.cost = float(c)


def union_weighted_series(runs: Dict[str, Sequence[MetricsRecord]],
                          weights: CostWeights) -> Dict[str, np.ndarray]:
    """Weighted cost per run, normalized over the union of all runs.

    Puts every run on one scale so curves and end-state means can be
    compared across algorithms and seeds.
    """
    all_lb = np.concatenate([[r.lb_cost for r in recs] for recs in runs.values()])
    all_rt = np.concatenate([[r.rt_cost for r in recs] for recs in runs.values()])

    def scale(values: np.ndarray, pool: np.ndarray) -> np.ndarray:
        finite = pool[np.isfinite(pool)]
        if finite.size == 0:
            return np.full_like(values, np.nan)
        lo, hi = float(finite.min()), float(finite.max())
        if hi <= lo:
            return np.where(np.isfinite(values), 0.0, np.nan)
        return (values - lo) / (hi - lo)

    out = {}
    for name, recs in runs.items():
        lb = np.array([r.lb_cost for r in recs], dtype=float)
        rt = np.array([r.rt_cost for r in recs], dtype=float)
        out[name] = weights.w1 * scale(lb, all_lb) + weights.w2 * scale(rt, all_rt)
    return out
