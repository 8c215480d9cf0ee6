"""Clipped-surrogate policy optimization over the scheduling MDP.

Actor and critic are the from-scratch MLPs from :mod:`fogsched.neural`; the
update runs K full-batch epochs over one fixed-horizon rollout, then syncs
the old policy. Advantages are plain discounted reward sums with a value
bootstrap (no GAE, no standardization) and the value target is the
rollout-frozen return R_t = A_t + V_old(s_t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .neural import (AdamState, MlpParams, adam_step, backward, entropy,
                     forward, init_mlp, load_checkpoint, log_softmax,
                     save_checkpoint, softmax)
from .simulator import DecisionContext, Scheduler


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    value: float
    log_prob: float
    success: bool


@dataclass
class RolloutBuffer:
    transitions: List[Transition] = field(default_factory=list)
    bootstrap_value: float = 0.0

    def append(self, tr: Transition) -> None:
        self.transitions.append(tr)

    def clear(self) -> None:
        self.transitions.clear()
        self.bootstrap_value = 0.0

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass(frozen=True)
class PpoHyper:
    """Hyperparameters; defaults follow the reference operating point."""

    clip_epsilon: float = 0.3
    gamma: float = 0.9
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    coef_policy: float = 1.0
    coef_value: float = 0.5
    coef_entropy: float = 0.01
    horizon: int = 64
    epochs: int = 8
    hidden_units: int = 64

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("K >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.clip_epsilon <= 0:
            raise ValueError("clip epsilon must be positive")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0,1]")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ValueError("learning rates must be positive")


def compute_advantages(buffer: RolloutBuffer, gamma: float) -> np.ndarray:
    """A_t = -V(s_t) + sum_{i=t}^{T-1} gamma^{i-t} r_i + gamma^{T-t} V_boot.

    Computed by the usual backward recursion; agrees with the naive forward
    summation to floating-point accumulation noise.
    """
    n = len(buffer)
    if n == 0:
        raise ValueError("empty rollout buffer")
    adv = np.empty(n, dtype=np.float64)
    running = buffer.bootstrap_value
    for t in range(n - 1, -1, -1):
        running = buffer.transitions[t].reward + gamma * running
        adv[t] = running - buffer.transitions[t].value
    return adv


def clip_ratio(ratio: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Piecewise clip: lo below, identity inside, hi above."""
    r = np.asarray(ratio, dtype=np.float64)
    return np.minimum(np.maximum(r, lo), hi)


def fleet_fingerprint(fleet) -> Tuple:
    """Hashable identity of a fleet; any change triggers re-initialization."""
    return tuple((s.cpu_cores, s.cpu_freq_mhz, s.ram_size_gb) for s in fleet)


class PpoAgent:
    """Actor-critic pair plus old-policy snapshot and rollout buffer."""

    def __init__(self, state_dim: int, n_actions: int,
                 hyper: Optional[PpoHyper] = None, seed: int = 0,
                 fingerprint: Tuple = ()):
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.hyper = hyper or PpoHyper()
        self.seed = seed
        self.fingerprint = fingerprint
        self._reinits = 0
        self._action_rng = np.random.default_rng([seed, 1])
        self._init_networks()
        self.buffer = RolloutBuffer()

    def _init_networks(self) -> None:
        rng = np.random.default_rng([self.seed, 0, self._reinits])
        h = self.hyper.hidden_units
        self.actor = init_mlp(self.state_dim, h, self.n_actions, "tanh", rng)
        self.actor_old = self.actor.copy()
        self.critic = init_mlp(self.state_dim, h, 1, "tanh", rng)
        self.adam_actor = AdamState.zeros(self.actor)
        self.adam_critic = AdamState.zeros(self.critic)

    # -- acting ---------------------------------------------------------------

    def select_action(self, state: np.ndarray, mode: str = "sample") -> Tuple[int, float, float]:
        """Returns (action, log_prob under the current policy, state value).

        ``sample`` draws from the softmax policy using the agent's own seeded
        stream; ``greedy`` takes the argmax (ties to the lowest index).
        """
        logits = forward(self.actor, state)
        logp = log_softmax(logits)
        value = float(forward(self.critic, state)[0])
        if mode == "greedy":
            action = int(np.argmax(softmax(logits)))
        elif mode == "sample":
            probs = softmax(logits)
            cs = np.cumsum(probs)
            u = self._action_rng.random() * cs[-1]
            action = min(int(np.searchsorted(cs, u, side="right")), self.n_actions - 1)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return action, float(logp[action]), value

    # -- learning -------------------------------------------------------------

    def _batch(self):
        trs = self.buffer.transitions
        states = np.stack([tr.state for tr in trs])
        actions = np.array([tr.action for tr in trs], dtype=int)
        old_logp = np.array([tr.log_prob for tr in trs], dtype=np.float64)
        values = np.array([tr.value for tr in trs], dtype=np.float64)
        return states, actions, old_logp, values

    def loss(self, advantages: np.ndarray) -> Tuple[float, Dict[str, float]]:
        """Composite loss over the buffer at the current parameters.

        L = -c_pi * L_CLIP + c_v * L_VF - c_e * L_ENT with summed (not
        averaged) per-step terms. Also returns diagnostics.
        """
        hp = self.hyper
        states, actions, old_logp, values = self._batch()
        adv = np.asarray(advantages, dtype=np.float64)
        returns = adv + values

        logits = forward(self.actor, states)
        logp_all = log_softmax(logits)
        probs = softmax(logits)
        idx = np.arange(len(actions))
        logp = logp_all[idx, actions]
        ratio = np.exp(logp - old_logp)
        clipped = clip_ratio(ratio, 1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon)
        l_clip = float(np.minimum(ratio * adv, clipped * adv).sum())

        v = forward(self.critic, states)[:, 0]
        l_vf = float(((v - returns) ** 2).sum())
        l_ent = float(entropy(probs).sum())

        total = -hp.coef_policy * l_clip + hp.coef_value * l_vf - hp.coef_entropy * l_ent
        diag = {
            "l_clip": l_clip, "l_vf": l_vf, "l_entropy": l_ent,
            "ratio_mean": float(ratio.mean()),
            "clip_fraction": float(np.mean((ratio < 1.0 - hp.clip_epsilon)
                                           | (ratio > 1.0 + hp.clip_epsilon))),
        }
        return total, diag

    def update(self) -> Dict[str, float]:
        """K epochs of full-batch ascent on the clipped objective, then sync
        the old policy to the new one and clear the buffer."""
        if len(self.buffer) == 0:
            raise ValueError("empty rollout buffer")
        hp = self.hyper
        adv = compute_advantages(self.buffer, hp.gamma)
        states, actions, old_logp, values = self._batch()
        returns = adv + values  # rollout-frozen value targets
        idx = np.arange(len(actions))
        onehot = np.zeros((len(actions), self.n_actions), dtype=np.float64)
        onehot[idx, actions] = 1.0

        diag: Dict[str, float] = {}
        for _ in range(hp.epochs):
            # actor: d(-c_pi*L_CLIP - c_e*L_ENT)/dlogits, derived analytically
            logits = forward(self.actor, states)
            logp_all = log_softmax(logits)
            probs = softmax(logits)
            logp = logp_all[idx, actions]
            ratio = np.exp(logp - old_logp)
            clipped = clip_ratio(ratio, 1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon)
            unclipped_active = (ratio * adv) <= (clipped * adv)
            # dL_CLIP/dlogits: where the unclipped branch is active the grad
            # is adv * ratio * (onehot - probs); the saturated branch is flat.
            coef = np.where(unclipped_active, adv * ratio, 0.0)
            g_clip = coef[:, None] * (onehot - probs)
            h = entropy(probs)
            g_ent = -probs * (logp_all + h[:, None])
            actor_out_grad = -hp.coef_policy * g_clip - hp.coef_entropy * g_ent
            adam_step(self.actor, backward(self.actor, states, actor_out_grad),
                      self.adam_actor, hp.lr_actor)

            # critic: d(c_v * sum (V - R)^2)/dV
            v = forward(self.critic, states)[:, 0]
            critic_out_grad = (hp.coef_value * 2.0 * (v - returns))[:, None]
            adam_step(self.critic, backward(self.critic, states, critic_out_grad),
                      self.adam_critic, hp.lr_critic)

        total, diag = self.loss(adv)
        diag["loss"] = total
        self.actor_old = self.actor.copy()
        self.buffer.clear()
        return diag

    def reset_on_fleet_change(self, fingerprint: Tuple) -> bool:
        """Re-initialize networks and discard the partial rollout when the
        fleet changed; returns True when a reset happened."""
        if fingerprint == self.fingerprint:
            return False
        self.fingerprint = fingerprint
        self._reinits += 1
        self._init_networks()
        self.buffer.clear()
        return True

    # -- persistence ----------------------------------------------------------

    def save(self, path: str) -> None:
        meta = {
            "algo": "ppo",
            "state_dim": self.state_dim,
            "n_actions": self.n_actions,
            "hyper": vars(self.hyper) if not hasattr(self.hyper, "__dataclass_fields__")
                     else {k: getattr(self.hyper, k) for k in self.hyper.__dataclass_fields__},
            "seed": self.seed,
        }
        save_checkpoint(path, meta, [
            ("actor", self.actor, self.adam_actor),
            ("actor_old", self.actor_old, None),
            ("critic", self.critic, self.adam_critic),
        ])

    @classmethod
    def load(cls, path: str) -> "PpoAgent":
        meta, sections = load_checkpoint(path)
        if meta.get("algo") != "ppo":
            raise ValueError(f"checkpoint holds {meta.get('algo')!r}, not ppo")
        agent = cls(state_dim=meta["state_dim"], n_actions=meta["n_actions"],
                    hyper=PpoHyper(**meta["hyper"]), seed=meta.get("seed", 0))
        agent.actor, agent.adam_actor = sections["actor"]
        agent.actor_old = sections["actor_old"][0]
        agent.critic, agent.adam_critic = sections["critic"]
        return agent


class PpoScheduler(Scheduler):
    """Scheduler adapter: collects rollouts and updates every horizon steps.

    ``end_block`` bootstraps from the next decision's state (0 when the run
    is exhausted), runs the update, and leaves a fresh buffer behind.
    """

    def __init__(self, agent: PpoAgent, mode: str = "sample"):
        self.agent = agent
        self.mode = mode
        self.learning = mode == "sample"
        self._last: Optional[Tuple[np.ndarray, int, float, float]] = None
        self.update_diags: List[Dict[str, float]] = []

    def select(self, state: np.ndarray, ctx: DecisionContext) -> int:
        action, logp, value = self.agent.select_action(state, mode=self.mode)
        self._last = (state, action, logp, value)
        return action

    def observe(self, state: np.ndarray, action: int, reward: float,
                success: bool) -> None:
        if not self.learning:
            return
        assert self._last is not None and self._last[1] == action
        _, _, logp, value = self._last
        self.agent.buffer.append(Transition(
            state=state, action=action, reward=reward, value=value,
            log_prob=logp, success=success))

    def end_block(self, next_state: Optional[np.ndarray]) -> None:
        if not self.learning or len(self.agent.buffer) == 0:
            return
        if next_state is None:
            self.agent.buffer.bootstrap_value = 0.0
        else:
            self.agent.buffer.bootstrap_value = float(
                forward(self.agent.critic, next_state)[0])
        self.update_diags.append(self.agent.update())
