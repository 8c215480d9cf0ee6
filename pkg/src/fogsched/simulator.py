"""Deterministic discrete-event simulator for fleet scheduling.

The environment generates DAG applications from a seeded workload profile,
feeds ready tasks to a scheduler one decision at a time, occupies server
resources for the realized response time of each placement, and releases them
on completion events. Identical (seed, config, scheduler) runs produce
bit-identical episode logs.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .domain import (AppDag, CostWeights, NetworkModel, PathCostEstimator,
                     PlacementSet, ServerSpec, ServerState, TaskSpec,
                     critical_path_cost, default_estimator, load_balance_cost,
                     mark_critical, processing_time_ms, structural_estimator,
                     transfer_time_ms, validate_fleet)
from .mdp import (FeatureCaps, NormalizerState, RewardConfig, featurize,
                  reward_load_balance, reward_response_time, reward_weighted)


# ---------------------------------------------------------------------------
# Workload
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorkloadProfile:
    """Ranges describing the synthetic application stream.

    All ``(lo, hi)`` ranges are inclusive-uniform. ``arrival_interval_ms``
    of None means "fixed interval equal to the mean critical-path estimate of
    the episode's applications"; arrival_mode "poisson" draws memoryless
    interarrivals at ``arrival_rate_per_s``.
    """

    apps_per_episode: int = 8
    tasks_per_app: Tuple[int, int] = (3, 8)
    dag_width: Tuple[int, int] = (1, 3)
    size_mcycles: Tuple[float, float] = (500.0, 3000.0)
    ram_demand_gb: Tuple[float, float] = (0.1, 1.2)
    cpu_demand: Tuple[float, float] = (0.1, 0.5)
    packet_mb: Tuple[float, float] = (5.0, 40.0)
    arrival_mode: str = "fixed"
    arrival_interval_ms: Optional[float] = None
    arrival_rate_per_s: Optional[float] = None

    def scaled(self, size_factor: float) -> "WorkloadProfile":
        """Copy with task sizes scaled, the analog of changing input detail."""
        lo, hi = self.size_mcycles
        return replace(self, size_mcycles=(lo * size_factor, hi * size_factor))


def generate_workload(profile: WorkloadProfile, seed, estimator: Optional[PathCostEstimator] = None,
                      id_start: int = 0, app_id_start: int = 0) -> List[AppDag]:
    """Deterministically generate one episode's applications.

    Layered DAG construction: layer sizes drawn from ``dag_width``, every
    non-root task gets 1..3 parents from the previous layer, edges only point
    forward. Task ids are globally unique starting at ``id_start``; tasks are
    listed in topological order. Critical flags are marked with ``estimator``
    (fleet-free structural estimate when omitted).
    """
    rng = np.random.default_rng(seed)
    est = estimator if estimator is not None else structural_estimator()
    apps: List[AppDag] = []
    next_id = id_start
    for a in range(profile.apps_per_episode):
        n_tasks = int(rng.integers(profile.tasks_per_app[0], profile.tasks_per_app[1] + 1))
        layers: List[List[int]] = []
        remaining = n_tasks
        while remaining > 0:
            width = int(rng.integers(profile.dag_width[0], profile.dag_width[1] + 1))
            width = min(width, remaining)
            layers.append(list(range(next_id, next_id + width)))
            next_id += width
            remaining -= width
        tasks: List[TaskSpec] = []
        for li, layer in enumerate(layers):
            for tid in layer:
                preds: Tuple[int, ...] = ()
                packets: Dict[int, float] = {}
                if li > 0:
                    prev = layers[li - 1]
                    k = int(rng.integers(1, min(3, len(prev)) + 1))
                    chosen = sorted(int(p) for p in rng.choice(prev, size=k, replace=False))
                    preds = tuple(chosen)
                    for p in chosen:
                        packets[p] = float(rng.uniform(*profile.packet_mb))
                tasks.append(TaskSpec(
                    id=tid,
                    app_id=app_id_start + a,
                    size_mcycles=float(rng.uniform(*profile.size_mcycles)),
                    ram_demand_gb=float(rng.uniform(*profile.ram_demand_gb)),
                    cpu_demand=float(rng.uniform(*profile.cpu_demand)),
                    predecessors=preds,
                    packet_mb=packets,
                ))
        apps.append(mark_critical(AppDag(app_id=app_id_start + a, tasks=tasks), est))
    return apps


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlacementOutcome:
    success: bool
    response_time_ms: float


@dataclass(frozen=True)
class DecisionContext:
    """Extra context handed to schedulers that plan beyond a single state."""

    env: "SimEnv"
    task: TaskSpec
    app: AppDag


class Scheduler:
    """Per-decision policy interface.

    ``select`` returns a server id for the featurized state. Learning
    schedulers use ``observe`` (called after every decision with the training
    reward) and ``end_block`` (called once per policy-update block with the
    next decision's state, or None when the run is exhausted).
    """

    def select(self, state: np.ndarray, ctx: DecisionContext) -> int:
        raise NotImplementedError

    def observe(self, state: np.ndarray, action: int, reward: float,
                success: bool) -> None:
        pass

    def on_episode_reset(self) -> None:
        """Called when the environment regenerates its workload. Task ids
        restart per episode, so schedulers caching per-task state clear it."""

    def end_block(self, next_state: Optional[np.ndarray]) -> None:
        pass


class FixedScheduler(Scheduler):
    def __init__(self, server_id: int):
        self.server_id = server_id

    def select(self, state, ctx):
        return self.server_id


class RoundRobinScheduler(Scheduler):
    def __init__(self, n_servers: int):
        self.n_servers = n_servers
        self._next = 0

    def select(self, state, ctx):
        choice = self._next
        self._next = (self._next + 1) % self.n_servers
        return choice


class RandomScheduler(Scheduler):
    """Uniform random placement; feasibility-blind, so it exercises failures."""

    def __init__(self, n_servers: int, seed=0):
        self.n_servers = n_servers
        self.rng = np.random.default_rng(seed)

    def select(self, state, ctx):
        return int(self.rng.integers(self.n_servers))


def resource_check(task: TaskSpec, fleet: Sequence[ServerSpec],
                   states: Sequence[ServerState]) -> List[int]:
    """Servers whose free CPU and RAM can host the task right now."""
    feasible = []
    for spec, st in zip(fleet, states):
        cpu_after = st.cpu_utilization + task.cpu_demand / spec.cpu_cores
        ram_after = st.ram_utilization + task.ram_demand_gb / spec.ram_size_gb
        if cpu_after <= 1.0 and ram_after <= 1.0:
            feasible.append(spec.id)
    return feasible


class SimEnv:
    """Event-driven fleet environment.

    Episodes are regenerated from ``reset(episode)``; the constructor resets
    to episode 0. Events are (time, seq)-ordered so simultaneous events fire
    in creation order. ``event_log`` records every arrival, placement,
    completion and drop for replay-style verification.
    """

    def __init__(self, fleet: Sequence[ServerSpec], net: NetworkModel,
                 profile: WorkloadProfile, seed: int = 0,
                 estimator: Optional[PathCostEstimator] = None):
        bad = validate_fleet(fleet)
        if bad:
            raise ValueError("; ".join(v.message for v in bad))
        net.validate()
        if net.n_servers != len(fleet):
            raise ValueError("network size does not match fleet size")
        self.fleet = list(fleet)
        self.net = net
        self.profile = profile
        self.seed = seed
        self.estimator = estimator if estimator is not None else default_estimator(fleet, net)
        self.reset(0)

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, episode: int = 0) -> None:
        self.episode = episode
        self.now_ms = 0.0
        self._seq = 0
        self._events: List[Tuple[float, int, str, tuple]] = []
        self.states = [ServerState(spec=s) for s in self.fleet]
        self.placement = PlacementSet()
        self.event_log: List[tuple] = []
        self.dropped: List[int] = []

        self.apps = generate_workload(self.profile, [self.seed, episode, 0],
                                      estimator=self.estimator)
        self._task_by_id: Dict[int, TaskSpec] = {}
        self._app_of: Dict[int, AppDag] = {}
        self._topo_idx: Dict[int, int] = {}
        self._children: Dict[int, List[int]] = {}
        self._app_seq: Dict[int, int] = {}
        for seq, app in enumerate(self.apps):
            self._app_seq[app.app_id] = seq
            for idx, t in enumerate(app.tasks):
                if t.id in self._task_by_id:
                    raise ValueError(f"duplicate task id {t.id}")
                self._task_by_id[t.id] = t
                self._app_of[t.id] = app
                self._topo_idx[t.id] = idx
                self._children.setdefault(t.id, [])
            for t in app.tasks:
                for p in t.predecessors:
                    self._children[p].append(t.id)

        self._completed: Set[int] = set()
        self._dropped: Set[int] = set()
        self._arrived: Set[int] = set()
        self._running: Set[int] = set()
        self._ready_heap: List[Tuple[int, int, int]] = []
        self._ready_set: Set[int] = set()
        self._pending: Optional[int] = None

        for t0, app in zip(self._arrival_times(episode), self.apps):
            self._push_event(t0, "arrival", (app.app_id,))

    def _arrival_times(self, episode: int) -> List[float]:
        n = len(self.apps)
        if self.profile.arrival_mode == "poisson":
            if not self.profile.arrival_rate_per_s or self.profile.arrival_rate_per_s <= 0:
                raise ValueError("poisson arrivals need a positive arrival_rate_per_s")
            rng = np.random.default_rng([self.seed, episode, 1])
            gaps = rng.exponential(1000.0 / self.profile.arrival_rate_per_s, size=n)
            return list(np.cumsum(gaps) - gaps[0])
        interval = self.profile.arrival_interval_ms
        if interval is None:
            costs = [critical_path_cost(app, self.estimator)[0] for app in self.apps]
            interval = float(np.mean(costs)) if costs else 0.0
        return [i * interval for i in range(n)]

    # -- event machinery -----------------------------------------------------

    def _push_event(self, when: float, kind: str, payload: tuple) -> None:
        heapq.heappush(self._events, (when, self._seq, kind, payload))
        self._seq += 1

    def _fire(self, event: Tuple[float, int, str, tuple]) -> None:
        when, _, kind, payload = event
        self.now_ms = max(self.now_ms, when)
        if kind == "arrival":
            app_id = payload[0]
            self._arrived.add(app_id)
            app = self.apps[self._app_seq[app_id]]
            self.event_log.append(("arrival", when, app_id))
            for t in app.tasks:
                if not t.predecessors:
                    self._make_ready(t.id)
        elif kind == "complete":
            task_id, server_id = payload
            self.states[server_id].remove(task_id)
            self._running.discard(task_id)
            self._completed.add(task_id)
            self.event_log.append(("complete", when, task_id, server_id))
            for child in self._children.get(task_id, ()):
                self._maybe_ready(child)

    def _maybe_ready(self, task_id: int) -> None:
        if task_id in self._dropped or task_id in self._completed:
            return
        task = self._task_by_id[task_id]
        if all(p in self._completed for p in task.predecessors):
            self._make_ready(task_id)

    def _make_ready(self, task_id: int) -> None:
        if task_id in self._ready_set:
            return
        app = self._app_of[task_id]
        heapq.heappush(self._ready_heap,
                       (self._app_seq[app.app_id], self._topo_idx[task_id], task_id))
        self._ready_set.add(task_id)

    def advance(self, until_ms: float) -> List[tuple]:
        """Fire every event at or before ``until_ms``; returns the fired log
        entries. The clock ends at ``until_ms``."""
        fired_from = len(self.event_log)
        while self._events and self._events[0][0] <= until_ms:
            self._fire(heapq.heappop(self._events))
        self.now_ms = max(self.now_ms, until_ms)
        return self.event_log[fired_from:]

    def drain(self) -> None:
        """Run the event queue dry (all running work completes)."""
        while self._events:
            self._fire(heapq.heappop(self._events))

    # -- scheduling interface --------------------------------------------------

    def peek_task(self) -> Optional[TaskSpec]:
        """Next ready task, advancing the clock over events as needed.

        Idempotent until the task is placed or dropped; returns None when the
        episode's workload is exhausted.
        """
        if self._pending is not None:
            return self._task_by_id[self._pending]
        while True:
            while self._ready_heap:
                _, _, tid = heapq.heappop(self._ready_heap)
                if tid in self._ready_set:
                    self._ready_set.discard(tid)
                    self._pending = tid
                    return self._task_by_id[tid]
            if not self._events:
                return None
            self._fire(heapq.heappop(self._events))

    def app_of(self, task_id: int) -> AppDag:
        return self._app_of[task_id]

    def cpu_utils(self) -> List[float]:
        return [st.cpu_utilization for st in self.states]

    def ram_utils(self) -> List[float]:
        return [st.ram_utilization for st in self.states]

    def feasible_servers(self, task: TaskSpec) -> List[int]:
        return resource_check(task, self.fleet, self.states)

    def assign_task(self, task: TaskSpec, server_id: int) -> PlacementOutcome:
        """Try to place a ready task; on success the server is occupied from
        now until now + realized response time and a completion is scheduled.
        Fails (without state change) when the server lacks free capacity."""
        if not (0 <= server_id < len(self.fleet)):
            raise ValueError("unknown server")
        if task.id not in self._task_by_id:
            raise ValueError(f"unknown task {task.id}")
        if task.id in self._completed or task.id in self._running:
            raise ValueError("task already placed")
        if task.id in self._dropped:
            raise ValueError("task was dropped")
        if any(p not in self._completed for p in task.predecessors):
            raise ValueError("precedence violation")

        spec = self.fleet[server_id]
        st = self.states[server_id]
        cpu_after = st.cpu_utilization + task.cpu_demand / spec.cpu_cores
        ram_after = st.ram_utilization + task.ram_demand_gb / spec.ram_size_gb
        if cpu_after > 1.0 or ram_after > 1.0:
            return PlacementOutcome(False, math.nan)

        ready = 0.0
        for p in task.predecessors:
            src = self.placement.server_of(p)
            if src is None:
                raise ValueError("dependency unplaced")
            ready = max(ready, transfer_time_ms(src, server_id, task.packet_mb.get(p, 0.0), self.net))
        omega = ready + processing_time_ms(task.size_mcycles, spec.cpu_freq_mhz)

        release = self.now_ms + omega
        st.add(task.id, task.cpu_demand, task.ram_demand_gb, release)
        self.placement.assign(task.id, server_id)
        self._running.add(task.id)
        self._push_event(release, "complete", (task.id, server_id))
        self.event_log.append(("place", self.now_ms, task.id, server_id, omega))
        if self._pending == task.id:
            self._pending = None
        self._ready_set.discard(task.id)
        return PlacementOutcome(True, omega)

    def force_place(self, task: TaskSpec) -> Optional[PlacementOutcome]:
        """Retry path: place on the lowest-indexed feasible server, if any."""
        for server_id in self.feasible_servers(task):
            return self.assign_task(task, server_id)
        return None

    def drop_task(self, task: TaskSpec) -> List[int]:
        """Drop a task and, transitively, every dependent; returns the ids."""
        dropped: List[int] = []
        stack = [task.id]
        while stack:
            tid = stack.pop()
            if tid in self._dropped:
                continue
            self._dropped.add(tid)
            self._ready_set.discard(tid)
            if self._pending == tid:
                self._pending = None
            dropped.append(tid)
            self.event_log.append(("drop", self.now_ms, tid))
            stack.extend(self._children.get(tid, ()))
        self.dropped.extend(dropped)
        return dropped

    def audit(self) -> None:
        """Verify conservation invariants; raises AssertionError on breach."""
        for st in self.states:
            cpu_sum = sum(r[1] for r in st.resident)
            ram_sum = sum(r[2] for r in st.resident)
            assert abs(st.cpu_utilization * st.spec.cpu_cores - cpu_sum) <= 1e-9, \
                f"server {st.spec.id} cpu occupancy drifted"
            assert abs(st.ram_utilization * st.spec.ram_size_gb - ram_sum) <= 1e-9, \
                f"server {st.spec.id} ram occupancy drifted"
            assert -0.0 <= st.cpu_utilization <= 1.0, f"server {st.spec.id} cpu out of range"
            assert -0.0 <= st.ram_utilization <= 1.0, f"server {st.spec.id} ram out of range"

    @property
    def exhausted(self) -> bool:
        return self._pending is None and not self._ready_set and not self._events


# ---------------------------------------------------------------------------
# Decision loop and episode logs
# ---------------------------------------------------------------------------

@dataclass
class ActorRecord:
    decision: int
    task_id: int
    server_id: int
    cpu_utils: Tuple[float, ...]
    ram_utils: Tuple[float, ...]


@dataclass
class UserRecord:
    decision: int
    task_id: int
    response_time_ms: float
    success: bool


@dataclass
class ActorBuffer:
    records: List[ActorRecord] = field(default_factory=list)


@dataclass
class UserBuffer:
    records: List[UserRecord] = field(default_factory=list)


@dataclass
class DecisionRecord:
    """One scheduling decision; the episode-log line format."""

    decision: int
    task_id: int
    server_id: int
    success: bool
    r_lb: float
    r_rt: float
    r_weighted: float
    lb_cost: float
    rt_cost: float
    weighted_cost: float
    select_ms: float = 0.0  # not exported; feeds overhead metrics

    CSV_HEADER = "decision,task,server,success,r_lb,r_rt,r_weighted,lb_cost,rt_cost,weighted_cost"

    def csv_line(self) -> str:
        return ",".join([
            str(self.decision), str(self.task_id), str(self.server_id),
            str(int(self.success)),
            repr(float(self.r_lb)), repr(float(self.r_rt)), repr(float(self.r_weighted)),
            repr(float(self.lb_cost)), repr(float(self.rt_cost)), repr(float(self.weighted_cost)),
        ])


@dataclass
class EpisodeLog:
    actor: ActorBuffer = field(default_factory=ActorBuffer)
    user: UserBuffer = field(default_factory=UserBuffer)
    decisions: List[DecisionRecord] = field(default_factory=list)

    def csv_lines(self) -> List[str]:
        return [DecisionRecord.CSV_HEADER] + [d.csv_line() for d in self.decisions]

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.csv_lines()) + "\n")


class DecisionLoop:
    """Drives one scheduler through the environment decision by decision.

    Owns the reward bookkeeping: the previous-decision load-balance cost, the
    running normalizer, and the per-objective training reward handed to the
    scheduler. Survives episode resets (running statistics persist for the
    whole run, as they would on a live deployment).
    """

    def __init__(self, env: SimEnv, scheduler: Scheduler, weights: CostWeights,
                 reward_cfg: Optional[RewardConfig] = None,
                 norm: Optional[NormalizerState] = None,
                 caps: Optional[FeatureCaps] = None,
                 objective: str = "weighted"):
        if objective not in ("load_balance", "response_time", "weighted"):
            raise ValueError(f"unknown objective {objective!r}")
        self.env = env
        self.scheduler = scheduler
        self.weights = weights
        self.reward_cfg = reward_cfg or RewardConfig(w1=weights.w1, w2=weights.w2)
        self.norm = norm or NormalizerState(size_range=env.profile.size_mcycles)
        self.caps = caps or FeatureCaps(max_servers=len(env.fleet))
        self.objective = objective
        self.decision = 0
        self._psi_prev = self._psi()

    def _psi(self) -> float:
        return load_balance_cost(self.env.cpu_utils(), self.env.ram_utils(), self.weights)

    def on_episode_reset(self) -> None:
        self._psi_prev = self._psi()
        self.scheduler.on_episode_reset()

    def peek_state(self) -> Optional[np.ndarray]:
        task = self.env.peek_task()
        if task is None:
            return None
        return featurize(task, self.env.app_of(task.id), self.env.placement,
                         self.env.fleet, self.env.states, self.env.net, self.caps)

    def step(self) -> Optional[DecisionRecord]:
        env = self.env
        task = env.peek_task()
        if task is None:
            return None
        app = env.app_of(task.id)
        state = featurize(task, app, env.placement, env.fleet, env.states,
                          env.net, self.caps)
        ctx = DecisionContext(env=env, task=task, app=app)
        t0 = time.perf_counter()
        server = int(self.scheduler.select(state, ctx))
        select_ms = (time.perf_counter() - t0) * 1000.0

        outcome = env.assign_task(task, server)
        success = outcome.success
        omega = outcome.response_time_ms
        if not success:
            # one retry against the feasible set, then drop with descendants
            retry = env.force_place(task)
            if retry is None:
                env.drop_task(task)
                omega = math.nan
            else:
                omega = retry.response_time_ms

        psi_cur = self._psi()
        r_lb = reward_load_balance(self._psi_prev, psi_cur, success, self.reward_cfg)
        if success:
            mean_rt = self.norm.observe_response(task.size_mcycles, omega)
            r_rt = reward_response_time(mean_rt, omega, True, self.reward_cfg)
        else:
            if not math.isnan(omega):  # retry landed: real sample, penalized decision
                self.norm.observe_response(task.size_mcycles, omega)
            r_rt = self.reward_cfg.penalty
        r_w = reward_weighted(r_lb, r_rt, success, self.reward_cfg, self.norm)

        self.norm.record_costs(psi_cur, None if math.isnan(omega) else omega)
        if math.isnan(omega):
            phi = math.nan
        else:
            from .domain import weighted_cost
            phi = weighted_cost(psi_cur, omega, self.weights, self.norm)

        reward = {"load_balance": r_lb, "response_time": r_rt, "weighted": r_w}[self.objective]
        self.scheduler.observe(state, server, reward, success)

        rec = DecisionRecord(
            decision=self.decision, task_id=task.id, server_id=server,
            success=success, r_lb=r_lb, r_rt=r_rt, r_weighted=r_w,
            lb_cost=psi_cur, rt_cost=omega, weighted_cost=phi,
            select_ms=select_ms,
        )
        self.decision += 1
        self._psi_prev = psi_cur
        return rec


def run_episode(env: SimEnv, scheduler: Scheduler, max_decisions: int = 64,
                weights: Optional[CostWeights] = None,
                reward_cfg: Optional[RewardConfig] = None,
                norm: Optional[NormalizerState] = None,
                caps: Optional[FeatureCaps] = None,
                objective: str = "weighted") -> EpisodeLog:
    """Run the current episode until exhaustion or ``max_decisions``.

    The environment is used as-is (construct or reset it first). Returns the
    full episode log: actor-side buffer (utilization snapshots), user-side
    buffer (realized response times), and per-decision cost records.
    """
    loop = DecisionLoop(env, scheduler, weights or CostWeights(),
                        reward_cfg=reward_cfg, norm=norm, caps=caps,
                        objective=objective)
    log = EpisodeLog()
    for _ in range(max_decisions):
        rec = loop.step()
        if rec is None:
            break
        log.decisions.append(rec)
        log.actor.records.append(ActorRecord(
            decision=rec.decision, task_id=rec.task_id, server_id=rec.server_id,
            cpu_utils=tuple(env.cpu_utils()), ram_utils=tuple(env.ram_utils())))
        log.user.records.append(UserRecord(
            decision=rec.decision, task_id=rec.task_id,
            response_time_ms=rec.rt_cost, success=rec.success))
    return log
