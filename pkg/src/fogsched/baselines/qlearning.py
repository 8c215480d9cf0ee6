"""Tabular Q-Learning over a discretized state space.

States are quantized feature-wise into uniform bins over declared ranges; the
bin tuple keys a lazily grown Q table. Action values default to zero, so
unseen states act uniformly under greedy ties (lowest index wins).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..domain import NetworkModel, ServerSpec
from ..mdp import SERVER_FEATURES, TASK_FEATURES, FeatureCaps
from ..simulator import DecisionContext, Scheduler, WorkloadProfile


@dataclass(frozen=True)
class QLearningConfig:
    alpha: float = 0.1
    gamma: float = 0.9
    bins: int = 4
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.9
    epsilon_min: float = 0.05


def feature_ranges(fleet: Sequence[ServerSpec], net: NetworkModel,
                   profile: WorkloadProfile, caps: FeatureCaps) -> np.ndarray:
    """Declared (lo, hi) per state feature, derived from fleet and profile.

    Mirrors the featurize layout. Constant features get degenerate ranges and
    land in bin 0.
    """
    mean_freq = float(np.mean([s.cpu_freq_mhz for s in fleet]))
    t_hi = profile.tasks_per_app[1]
    rt_lo = profile.size_mcycles[0] / mean_freq
    rt_hi = profile.size_mcycles[1] / mean_freq
    n = net.n_servers
    off = ~np.eye(n, dtype=bool)
    max_prop = float(net.propagation_ms[off].max()) / 1000.0 if n > 1 else 0.0
    min_bw = float(net.bandwidth_mbps[off].min()) if n > 1 else 1.0
    # state transfer features are in seconds; packet/bw is already seconds
    max_transfer = profile.packet_mb[1] / min_bw + max_prop if n > 1 else 0.0

    ranges = np.zeros((caps.state_dim, 2), dtype=np.float64)
    ranges[0] = (0, max(1, t_hi - 1))          # task index in app
    ranges[1] = (0, max(1, t_hi - 1))          # predecessor count
    ranges[2] = (0, max(1, t_hi - 1))          # successor count
    ranges[3] = (profile.tasks_per_app[0], t_hi)
    ranges[4] = profile.cpu_demand
    ranges[5] = profile.ram_demand_gb
    ranges[6] = (rt_lo, rt_hi)
    ranges[7] = (0, caps.max_servers)
    base = TASK_FEATURES + 1
    per = [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0),
           (0.0, max_prop), (0.0, 1.0), (0.0, max_transfer)]
    for k in range(caps.max_servers):
        for j, r in enumerate(per):
            ranges[base + SERVER_FEATURES * k + j] = r
    return ranges


def discretize_state(state: np.ndarray, bins: int, ranges: np.ndarray) -> Tuple[int, ...]:
    """Quantize each feature into ``bins`` uniform bins over its range.

    Values at or past the extremes land in the first/last bin; degenerate
    ranges collapse to bin 0.
    """
    s = np.asarray(state, dtype=np.float64)
    lo = ranges[:, 0]
    hi = ranges[:, 1]
    span = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(span > 0, (s - lo) / np.where(span > 0, span, 1.0), 0.0)
    idx = np.clip((frac * bins).astype(int), 0, bins - 1)
    return tuple(int(i) for i in idx)


@dataclass
class QTable:
    """Q table plus learning hyperparameters and exploration state."""

    n_actions: int
    cfg: QLearningConfig = field(default_factory=QLearningConfig)
    table: Dict[Tuple[int, ...], np.ndarray] = field(default_factory=dict)
    epsilon: float = -1.0

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            self.epsilon = self.cfg.epsilon_start

    def values(self, key: Tuple[int, ...]) -> np.ndarray:
        if key not in self.table:
            self.table[key] = np.zeros(self.n_actions, dtype=np.float64)
        return self.table[key]

    def decay_epsilon(self) -> None:
        self.epsilon = max(self.cfg.epsilon_min, self.epsilon * self.cfg.epsilon_decay)


def qlearning_step(agent: QTable, s_key: Tuple[int, ...], action: int, reward: float,
                   s_next_key: Optional[Tuple[int, ...]]) -> None:
    """Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)).

    A ``None`` next state (end of run) bootstraps with 0.
    """
    q = agent.values(s_key)
    future = 0.0 if s_next_key is None else float(agent.values(s_next_key).max())
    q[action] += agent.cfg.alpha * (reward + agent.cfg.gamma * future - q[action])


def save_qtable(agent: QTable, path: str) -> None:
    """Serialize as sorted key/value text lines: ``b1,b2,...<TAB>q0,q1,...``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n_actions={agent.n_actions} epsilon={agent.epsilon!r}\n")
        for key in sorted(agent.table):
            vals = ",".join(repr(float(v)) for v in agent.table[key])
            fh.write(",".join(str(k) for k in key) + "\t" + vals + "\n")


def load_qtable(path: str, cfg: Optional[QLearningConfig] = None) -> QTable:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = dict(p.split("=", 1) for p in header.lstrip("# ").split(" "))
        agent = QTable(n_actions=int(parts["n_actions"]), cfg=cfg or QLearningConfig(),
                       epsilon=float(parts["epsilon"]))
        for line in fh:
            if not line.strip():
                continue
            key_s, val_s = line.rstrip("\n").split("\t")
            key = tuple(int(k) for k in key_s.split(","))
            agent.table[key] = np.array([float(v) for v in val_s.split(",")], dtype=np.float64)
    return agent


class QLearningScheduler(Scheduler):
    """Epsilon-greedy tabular scheduler with per-block epsilon decay.

    Table updates need the next decision's state, so each transition is held
    pending until the following select (or the block boundary) supplies it.
    """

    def __init__(self, n_actions: int, ranges: np.ndarray,
                 cfg: Optional[QLearningConfig] = None, seed: int = 0,
                 greedy: bool = False):
        self.cfg = cfg or QLearningConfig()
        self.agent = QTable(n_actions=n_actions, cfg=self.cfg)
        self.ranges = ranges
        self.rng = np.random.default_rng([seed, 2])
        self.greedy = greedy
        self.learning = not greedy
        self._pending: Optional[Tuple[Tuple[int, ...], int, float]] = None

    def _key(self, state: np.ndarray) -> Tuple[int, ...]:
        return discretize_state(state, self.cfg.bins, self.ranges)

    def _flush(self, next_key: Optional[Tuple[int, ...]]) -> None:
        if self._pending is not None:
            s_key, action, reward = self._pending
            qlearning_step(self.agent, s_key, action, reward, next_key)
            self._pending = None

    def select(self, state: np.ndarray, ctx: DecisionContext) -> int:
        key = self._key(state)
        if self.learning:
            self._flush(key)
        if self.learning and self.rng.random() < self.agent.epsilon:
            return int(self.rng.integers(self.agent.n_actions))
        return int(np.argmax(self.agent.values(key)))

    def observe(self, state: np.ndarray, action: int, reward: float,
                success: bool) -> None:
        if self.learning:
            self._pending = (self._key(state), action, reward)

    def end_block(self, next_state: Optional[np.ndarray]) -> None:
        if not self.learning:
            return
        self._flush(None if next_state is None else self._key(next_state))
        self.agent.decay_epsilon()
