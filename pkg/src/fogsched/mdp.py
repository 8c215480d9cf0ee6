"""MDP view of the scheduling problem: state features, normalizers, rewards.

The decision process places one ready task per step; the action space is the
server index. States concatenate task descriptors with per-server fleet
descriptors, zero-padded to a fixed server capacity so network shapes survive
fleet changes up to that capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .domain import (AppDag, NetworkModel, PlacementSet, RunningRange,
                     ServerSpec, ServerState, TaskSpec, processing_time_ms,
                     transfer_time_ms)

TASK_FEATURES = 7
SERVER_FEATURES = 7


@dataclass(frozen=True)
class FeatureCaps:
    """Fixed feature-layout capacities; ``max_servers`` pads the fleet block."""

    max_servers: int

    @property
    def state_dim(self) -> int:
        return TASK_FEATURES + 1 + SERVER_FEATURES * self.max_servers


def featurize(task: TaskSpec, app: AppDag, placement: PlacementSet,
              fleet: Sequence[ServerSpec], states: Sequence[ServerState],
              net: NetworkModel, caps: FeatureCaps) -> np.ndarray:
    """Build the flat float64 state vector for one ready task.

    Layout:
      task block (7): index in app, #predecessors, #successors, app task
        count, cpu demand, ram demand, response-time estimate at the mean
        fleet frequency;
      fleet block (1 + 7 per server slot): server count, then per server
        cpu utilization, frequency / max fleet frequency, ram utilization,
        ram size / max fleet ram, mean incoming propagation, mean incoming
        bandwidth / max fleet bandwidth, and the worst-case transfer time
        from the task's placed parents to that server. Slots past the fleet
        size stay zero; root tasks have zero parent-transfer features.

    Time-valued features are expressed in seconds, not milliseconds, so that
    their magnitudes stay within the responsive range of tanh units.
    """
    n = len(fleet)
    if n > caps.max_servers:
        raise ValueError("fleet exceeds capacity")

    ids = [t.id for t in app.tasks]
    task_index = ids.index(task.id)
    n_succ = sum(1 for t in app.tasks if task.id in t.predecessors)
    mean_freq = float(np.mean([s.cpu_freq_mhz for s in fleet]))
    max_freq = float(max(s.cpu_freq_mhz for s in fleet))
    max_ram = float(max(s.ram_size_gb for s in fleet))
    if n > 1:
        off_diag = ~np.eye(n, dtype=bool)
        max_bw = float(net.bandwidth_mbps[off_diag].max())
    else:
        max_bw = 1.0

    vec = np.zeros(caps.state_dim, dtype=np.float64)
    vec[0] = task_index
    vec[1] = len(task.predecessors)
    vec[2] = n_succ
    vec[3] = len(app.tasks)
    vec[4] = task.cpu_demand
    vec[5] = task.ram_demand_gb
    vec[6] = processing_time_ms(task.size_mcycles, mean_freq) / 1000.0
    vec[7] = n

    parent_servers = []
    for p in task.predecessors:
        srv = placement.server_of(p)
        if srv is not None:
            parent_servers.append((p, srv))

    base = TASK_FEATURES + 1
    for k in range(n):
        off = base + SERVER_FEATURES * k
        st = states[k]
        spec = fleet[k]
        vec[off + 0] = st.cpu_utilization
        vec[off + 1] = spec.cpu_freq_mhz / max_freq
        vec[off + 2] = st.ram_utilization
        vec[off + 3] = spec.ram_size_gb / max_ram
        if n > 1:
            others = [j for j in range(n) if j != k]
            vec[off + 4] = float(np.mean([net.propagation_ms[j, k] for j in others])) / 1000.0
            vec[off + 5] = float(np.mean([net.bandwidth_mbps[j, k] for j in others])) / max_bw
        transfer = 0.0
        for p, srv in parent_servers:
            transfer = max(transfer, transfer_time_ms(srv, k, task.packet_mb.get(p, 0.0), net))
        vec[off + 6] = transfer / 1000.0
    return vec


@dataclass
class RewardConfig:
    """Reward shaping knobs. The penalty applies to failed placements and must
    dominate any successful weighted reward (|r| <= 1) in magnitude."""

    penalty: float = -10.0
    w1: float = 0.5
    w2: float = 0.5

    def __post_init__(self) -> None:
        if self.penalty >= 0:
            raise ValueError("penalty must be negative")
        if not (0.0 <= self.w1 <= 1.0 and 0.0 <= self.w2 <= 1.0
                and abs(self.w1 + self.w2 - 1.0) <= 1e-9):
            raise ValueError("w1+w2 must equal 1 with both in [0,1]")


@dataclass
class NormalizerState:
    """Running statistics shared across an experiment run.

    Tracks min/max of the two objective costs (for the weighted cost model),
    running mean response time per task-size bucket (for the response-time
    reward), and running max |r| per reward channel (for weighted reward
    normalization). Buckets split the declared size range into deciles; with
    no declared range a single bucket is used.
    """

    size_range: Optional[tuple] = None
    lb_range: RunningRange = field(default_factory=RunningRange)
    rt_range: RunningRange = field(default_factory=RunningRange)
    _rt_sum: Dict[int, float] = field(default_factory=dict)
    _rt_count: Dict[int, int] = field(default_factory=dict)
    max_abs_r_lb: float = 0.0
    max_abs_r_rt: float = 0.0

    def _bucket(self, size_mcycles: float) -> int:
        if not self.size_range:
            return 0
        lo, hi = self.size_range
        if hi <= lo:
            return 0
        frac = (size_mcycles - lo) / (hi - lo)
        return min(9, max(0, int(frac * 10.0)))

    def record_costs(self, lb_cost: float, rt_cost: Optional[float]) -> None:
        self.lb_range.record(lb_cost)
        if rt_cost is not None and not math.isnan(rt_cost):
            self.rt_range.record(rt_cost)

    def observe_response(self, size_mcycles: float, rt_ms: float) -> float:
        """Fold a realized response time into its bucket; returns the updated
        bucket mean (which therefore includes the current observation)."""
        b = self._bucket(size_mcycles)
        self._rt_sum[b] = self._rt_sum.get(b, 0.0) + rt_ms
        self._rt_count[b] = self._rt_count.get(b, 0) + 1
        return self._rt_sum[b] / self._rt_count[b]

    def observe_reward_scale(self, r_lb: float, r_rt: float) -> None:
        self.max_abs_r_lb = max(self.max_abs_r_lb, abs(r_lb))
        self.max_abs_r_rt = max(self.max_abs_r_rt, abs(r_rt))


def reward_load_balance(prev_cost: float, cur_cost: float, success: bool,
                        cfg: RewardConfig) -> float:
    """Improvement in fleet balance since the previous decision; penalty on
    failure. Positive iff the placement reduced the load-balance cost."""
    if not success:
        return cfg.penalty
    return prev_cost - cur_cost


def reward_response_time(mean_rt: float, cur_rt: float, success: bool,
                         cfg: RewardConfig) -> float:
    """Running-mean response time minus the realized one; penalty on failure.

    ``mean_rt`` must already include the current observation, so the first
    task of a bucket scores exactly 0.
    """
    if not success:
        return cfg.penalty
    return mean_rt - cur_rt


def reward_weighted(r_lb: float, r_rt: float, success: bool, cfg: RewardConfig,
                    norm: NormalizerState) -> float:
    """w1 * r_lb/max|r_lb| + w2 * r_rt/max|r_rt|, in [-1,1]; penalty on failure.

    The running max magnitudes are updated with the current sample before
    normalizing, which keeps each channel inside [-1,1]. A channel whose max
    is still zero contributes 0. Failed placements do not touch the scales.
    """
    if not success:
        return cfg.penalty
    norm.observe_reward_scale(r_lb, r_rt)
    n_lb = r_lb / norm.max_abs_r_lb if norm.max_abs_r_lb > 0 else 0.0
    n_rt = r_rt / norm.max_abs_r_rt if norm.max_abs_r_rt > 0 else 0.0
    return cfg.w1 * n_lb + cfg.w2 * n_rt
