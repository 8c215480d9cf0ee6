"""Deep Q-Network baseline: replay buffer, target network, epsilon-greedy.

Uses the same from-scratch MLP machinery as the policy-gradient agent, with a
ReLU hidden layer. Learning starts once the replay holds a full batch; the
target network only changes at synchronization steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..neural import (AdamState, MlpParams, adam_step, backward, forward,
                      init_mlp, load_checkpoint, save_checkpoint)
from ..simulator import DecisionContext, Scheduler


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    hidden_units: int = 64
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.9
    epsilon_min: float = 0.05
    replay_capacity: int = 10_000
    batch_size: int = 32
    target_sync: int = 100


@dataclass
class ReplayBuffer:
    """Fixed-capacity FIFO of (state, action, reward, next_state) tuples;
    ``next_state`` is None at run boundaries (bootstrap 0)."""

    capacity: int
    items: List[Tuple[np.ndarray, int, float, Optional[np.ndarray]]] = field(default_factory=list)
    _cursor: int = 0

    def append(self, item: Tuple[np.ndarray, int, float, Optional[np.ndarray]]) -> None:
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self._cursor] = item
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(len(self.items), size=batch)
        return [self.items[int(i)] for i in idx]

    def __len__(self) -> int:
        return len(self.items)


class DqnAgent:
    def __init__(self, state_dim: int, n_actions: int,
                 cfg: Optional[DqnConfig] = None, seed: int = 0):
        self.cfg = cfg or DqnConfig()
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.seed = seed
        rng = np.random.default_rng([seed, 3])
        self.online = init_mlp(state_dim, self.cfg.hidden_units, n_actions, "relu", rng)
        self.target = self.online.copy()
        self.adam = AdamState.zeros(self.online)
        self.replay = ReplayBuffer(self.cfg.replay_capacity)
        self.epsilon = self.cfg.epsilon_start
        self.grad_steps = 0
        self._rng = np.random.default_rng([seed, 4])

    def q_values(self, state: np.ndarray) -> np.ndarray:
        return forward(self.online, state)

    def act(self, state: np.ndarray, greedy: bool = False) -> int:
        if not greedy and self._rng.random() < self.epsilon:
            return int(self._rng.integers(self.n_actions))
        return int(np.argmax(self.q_values(state)))

    def decay_epsilon(self) -> None:
        self.epsilon = max(self.cfg.epsilon_min, self.epsilon * self.cfg.epsilon_decay)

    def save(self, path: str) -> None:
        meta = {"algo": "dqn", "state_dim": self.state_dim,
                "n_actions": self.n_actions, "seed": self.seed,
                "cfg": {k: getattr(self.cfg, k) for k in self.cfg.__dataclass_fields__},
                "epsilon": self.epsilon, "grad_steps": self.grad_steps}
        save_checkpoint(path, meta, [("online", self.online, self.adam),
                                     ("target", self.target, None)])

    @classmethod
    def load(cls, path: str) -> "DqnAgent":
        meta, sections = load_checkpoint(path)
        if meta.get("algo") != "dqn":
            raise ValueError(f"checkpoint holds {meta.get('algo')!r}, not dqn")
        agent = cls(meta["state_dim"], meta["n_actions"],
                    DqnConfig(**meta["cfg"]), seed=meta.get("seed", 0))
        agent.online, agent.adam = sections["online"]
        agent.target = sections["target"][0]
        agent.epsilon = meta["epsilon"]
        agent.grad_steps = meta["grad_steps"]
        return agent


def dqn_step(agent: DqnAgent,
             transition: Tuple[np.ndarray, int, float, Optional[np.ndarray]]) -> bool:
    """Store a transition and, when the replay holds a batch, take one
    gradient step on the mean squared TD error; syncs the target network
    every ``target_sync`` gradient steps. Returns True when a step ran.
    """
    agent.replay.append(transition)
    cfg = agent.cfg
    if len(agent.replay) < cfg.batch_size:
        return False
    batch = agent.replay.sample(cfg.batch_size, agent._rng)
    states = np.stack([b[0] for b in batch])
    actions = np.array([b[1] for b in batch], dtype=int)
    rewards = np.array([b[2] for b in batch], dtype=np.float64)

    targets = rewards.copy()
    next_mask = np.array([b[3] is not None for b in batch])
    if next_mask.any():
        next_states = np.stack([b[3] for b in batch if b[3] is not None])
        q_next = forward(agent.target, next_states).max(axis=1)
        targets[next_mask] += cfg.gamma * q_next

    q = forward(agent.online, states)
    idx = np.arange(cfg.batch_size)
    td = q[idx, actions] - targets
    # d(mean (Q - y)^2)/dQ on the chosen actions only
    out_grad = np.zeros_like(q)
    out_grad[idx, actions] = 2.0 * td / cfg.batch_size
    adam_step(agent.online, backward(agent.online, states, out_grad),
              agent.adam, cfg.lr)
    agent.grad_steps += 1
    if agent.grad_steps % cfg.target_sync == 0:
        agent.target = agent.online.copy()
    return True


class DqnScheduler(Scheduler):
    """Scheduler adapter with the pending-transition plumbing (next state of
    a transition is the following decision's state)."""

    def __init__(self, agent: DqnAgent, greedy: bool = False):
        self.agent = agent
        self.greedy = greedy
        self.learning = not greedy
        self._pending: Optional[Tuple[np.ndarray, int, float]] = None

    def _flush(self, next_state: Optional[np.ndarray]) -> None:
        if self._pending is not None:
            s, a, r = self._pending
            dqn_step(self.agent, (s, a, r, next_state))
            self._pending = None

    def select(self, state: np.ndarray, ctx: DecisionContext) -> int:
        if self.learning:
            self._flush(state)
        return self.agent.act(state, greedy=self.greedy)

    def observe(self, state: np.ndarray, action: int, reward: float,
                success: bool) -> None:
        if self.learning:
            self._pending = (state, action, reward)

    def end_block(self, next_state: Optional[np.ndarray]) -> None:
        if not self.learning:
            return
        self._flush(next_state)
        self.agent.decay_epsilon()
