"""Domain model: servers, DAG applications, placements, and the cost models.

Everything in this module is pure and side-effect free; mutable simulation
state lives in :mod:`fogsched.simulator`.

Units are fixed project-wide: time in milliseconds, task sizes in Mcycles,
CPU frequency in MHz, RAM in GB, packets in MB, bandwidth in MB/s. Mcycles
divided by MHz gives seconds, hence the explicit ``* 1000.0`` wherever a
millisecond quantity is produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ServerSpec:
    """Static description of one server in the fleet.

    For multi-core machines ``cpu_freq_mhz`` is the mean per-core frequency.
    ``kind`` is a free-form tag ("fog", "cloud", ...) used only by config
    shorthand when building link matrices.
    """

    id: int
    cpu_cores: int
    cpu_freq_mhz: float
    ram_size_gb: float
    kind: str = "fog"


@dataclass
class ServerState:
    """Mutable utilization state of one server.

    ``resident`` holds ``(task_id, cpu_demand_cores, ram_demand_gb,
    release_time_ms)`` tuples for every task currently occupying the server.
    Utilizations are always recomputed from ``resident`` so that occupancy
    sums stay exact under add/remove churn.
    """

    spec: ServerSpec
    resident: List[Tuple[int, float, float, float]] = field(default_factory=list)
    cpu_utilization: float = 0.0
    ram_utilization: float = 0.0

    def recompute(self) -> None:
        cpu = sum(r[1] for r in self.resident)
        ram = sum(r[2] for r in self.resident)
        self.cpu_utilization = cpu / self.spec.cpu_cores
        self.ram_utilization = ram / self.spec.ram_size_gb

    def add(self, task_id: int, cpu_demand: float, ram_demand_gb: float,
            release_time_ms: float) -> None:
        self.resident.append((task_id, cpu_demand, ram_demand_gb, release_time_ms))
        self.recompute()

    def remove(self, task_id: int) -> None:
        self.resident = [r for r in self.resident if r[0] != task_id]
        self.recompute()


@dataclass
class NetworkModel:
    """Pairwise link model between servers.

    ``bandwidth_mbps[i][j]`` and ``propagation_ms[i][j]`` describe the link
    used when task output moves from server i to server j. Diagonals are zero
    (co-located transfers are free).
    """

    bandwidth_mbps: np.ndarray
    propagation_ms: np.ndarray

    def __post_init__(self) -> None:
        self.bandwidth_mbps = np.asarray(self.bandwidth_mbps, dtype=float)
        self.propagation_ms = np.asarray(self.propagation_ms, dtype=float)

    @property
    def n_servers(self) -> int:
        return self.bandwidth_mbps.shape[0]

    def validate(self) -> None:
        bw, prop = self.bandwidth_mbps, self.propagation_ms
        if bw.shape != prop.shape or bw.ndim != 2 or bw.shape[0] != bw.shape[1]:
            raise ValueError("network matrices must be square and same shape")
        n = bw.shape[0]
        off = ~np.eye(n, dtype=bool)
        if n > 1 and not np.all(bw[off] > 0):
            raise ValueError("off-diagonal bandwidth must be positive")
        if not np.all(prop >= 0):
            raise ValueError("propagation must be nonnegative")

    def mean_offdiag(self) -> Tuple[Optional[float], float]:
        """(mean off-diagonal bandwidth, mean off-diagonal propagation)."""
        n = self.n_servers
        if n < 2:
            return None, 0.0
        off = ~np.eye(n, dtype=bool)
        return float(self.bandwidth_mbps[off].mean()), float(self.propagation_ms[off].mean())


@dataclass(frozen=True)
class TaskSpec:
    """One task of a DAG application.

    ``cpu_demand`` is a fraction of a single core; on a server with c cores
    the task occupies ``cpu_demand / c`` of total CPU. ``packet_mb`` maps each
    predecessor task id to the size of the data it ships to this task.
    """

    id: int
    app_id: int
    size_mcycles: float
    ram_demand_gb: float
    cpu_demand: float
    predecessors: Tuple[int, ...] = ()
    packet_mb: Dict[int, float] = field(default_factory=dict)


@dataclass
class AppDag:
    """A DAG application: tasks plus per-task critical-path flags.

    ``critical_flags`` marks exactly the tasks on one maximal-cost
    root-to-sink path (see :func:`critical_path`); ``None`` until computed.
    """

    app_id: int
    tasks: List[TaskSpec]
    critical_flags: Optional[Dict[int, bool]] = None

    def task_by_id(self, task_id: int) -> TaskSpec:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(f"unknown task {task_id}")

    def is_critical(self, task_id: int) -> bool:
        if self.critical_flags is None:
            raise ValueError("critical flags unset")
        return self.critical_flags.get(task_id, False)


@dataclass
class PlacementSet:
    """Task-to-server assignment; at most one server per task by construction."""

    assignment: Dict[int, int] = field(default_factory=dict)

    def assign(self, task_id: int, server_id: int) -> None:
        self.assignment[task_id] = server_id

    def server_of(self, task_id: int) -> Optional[int]:
        return self.assignment.get(task_id)


@dataclass(frozen=True)
class CostWeights:
    """Objective weights: a1/a2 blend CPU vs RAM variance, w1/w2 blend the
    load-balance and response-time objectives.

    Deliberately not validated at construction so that invalid weights can be
    *reported* by the constraint checker; use :meth:`violations`.
    """

    a1: float = 0.5
    a2: float = 0.5
    w1: float = 0.5
    w2: float = 0.5

    def violations(self) -> List["Violation"]:
        out: List[Violation] = []
        if not (0.0 <= self.w1 <= 1.0 and 0.0 <= self.w2 <= 1.0
                and abs(self.w1 + self.w2 - 1.0) <= 1e-9):
            out.append(Violation("C6", f"w1+w2 must equal 1 with both in [0,1], got w1={self.w1}, w2={self.w2}"))
        if not (0.0 <= self.a1 <= 1.0 and 0.0 <= self.a2 <= 1.0
                and abs(self.a1 + self.a2 - 1.0) <= 1e-9):
            out.append(Violation("lb_weights", f"a1+a2 must equal 1 with both in [0,1], got a1={self.a1}, a2={self.a2}"))
        return out


@dataclass(frozen=True)
class Violation:
    """A constraint violation reported as data, not as an exception."""

    constraint: str
    message: str


@dataclass
class RunningRange:
    """Running min/max tracker backing the min-max normalization of costs."""

    lo: float = math.inf
    hi: float = -math.inf

    def record(self, value: float) -> None:
        if value < self.lo:
            self.lo = value
        if value > self.hi:
            self.hi = value

    def normalize(self, value: float) -> float:
        """Min-max normalize into [0,1]; degenerate or empty range gives 0."""
        if not (self.hi > self.lo):
            return 0.0
        x = (value - self.lo) / (self.hi - self.lo)
        return min(1.0, max(0.0, x))


# ---------------------------------------------------------------------------
# Cost models
# ---------------------------------------------------------------------------

def load_balance_cost(cpu_utils: Sequence[float], ram_utils: Sequence[float],
                      weights: CostWeights) -> float:
    """Fleet load-balance cost: a1 * Var[cpu] + a2 * Var[ram].

    Population variance (divide by fleet size). Perfectly even utilization
    gives 0.
    """
    cpu = np.asarray(cpu_utils, dtype=float)
    ram = np.asarray(ram_utils, dtype=float)
    if cpu.size == 0 or ram.size == 0:
        raise ValueError("empty fleet")
    if cpu.size != ram.size:
        raise ValueError("cpu and ram utilization lists differ in length")
    for arr in (cpu, ram):
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("utilization out of range")
    return float(weights.a1 * cpu.var() + weights.a2 * ram.var())


def processing_time_ms(size_mcycles: float, cpu_freq_mhz: float) -> float:
    """Time to execute ``size_mcycles`` on a core running at ``cpu_freq_mhz``."""
    if size_mcycles <= 0 or cpu_freq_mhz <= 0:
        raise ValueError("invalid size or frequency")
    return size_mcycles / cpu_freq_mhz * 1000.0


def transfer_time_ms(src_server: int, dst_server: int, packet_mb: float,
                     net: NetworkModel) -> float:
    """Time to move ``packet_mb`` from src to dst; 0 when co-located."""
    n = net.n_servers
    if not (0 <= src_server < n) or not (0 <= dst_server < n):
        raise ValueError("unknown server")
    if src_server == dst_server:
        return 0.0
    bw = net.bandwidth_mbps[src_server, dst_server]
    return packet_mb / bw * 1000.0 + float(net.propagation_ms[src_server, dst_server])


def task_ready_time_ms(task: TaskSpec, placement: PlacementSet,
                       net: NetworkModel) -> float:
    """Time until the task's input data is available on its own server.

    Max over predecessors of the transfer time from the predecessor's server;
    0 for root tasks. Raises when the task or a predecessor is unplaced.
    """
    dst = placement.server_of(task.id)
    if dst is None:
        raise ValueError("task unplaced")
    worst = 0.0
    for pred in task.predecessors:
        src = placement.server_of(pred)
        if src is None:
            raise ValueError("dependency unplaced")
        packet = task.packet_mb.get(pred, 0.0)
        worst = max(worst, transfer_time_ms(src, dst, packet, net))
    return worst


def task_response_time_ms(task: TaskSpec, placement: PlacementSet,
                          fleet: Sequence[ServerSpec], net: NetworkModel) -> float:
    """Ready time plus processing time on the assigned server."""
    dst = placement.server_of(task.id)
    if dst is None:
        raise ValueError("task unplaced")
    if not (0 <= dst < len(fleet)):
        raise ValueError("unknown server")
    ready = task_ready_time_ms(task, placement, net)
    return ready + processing_time_ms(task.size_mcycles, fleet[dst].cpu_freq_mhz)


# ---------------------------------------------------------------------------
# Critical path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathCostEstimator:
    """Placement-independent path cost: per-node and per-edge estimates.

    ``edge_cost(parent, child)`` prices the data hop between two tasks.
    """

    node_cost: Callable[[TaskSpec], float]
    edge_cost: Callable[[TaskSpec, TaskSpec], float]


def default_estimator(fleet: Sequence[ServerSpec], net: NetworkModel) -> PathCostEstimator:
    """Estimator used when marking critical paths before placement is known.

    Node: processing time at the mean fleet frequency. Edge: transfer of the
    edge's packet at the mean off-diagonal bandwidth plus mean propagation.
    Single-server fleets price edges at 0 (everything is co-located).
    """
    mean_freq = float(np.mean([s.cpu_freq_mhz for s in fleet]))
    mean_bw, mean_prop = net.mean_offdiag()

    def node(task: TaskSpec) -> float:
        return processing_time_ms(task.size_mcycles, mean_freq)

    def edge(parent: TaskSpec, child: TaskSpec) -> float:
        if mean_bw is None:
            return 0.0
        packet = child.packet_mb.get(parent.id, 0.0)
        return packet / mean_bw * 1000.0 + mean_prop

    return PathCostEstimator(node_cost=node, edge_cost=edge)


def structural_estimator() -> PathCostEstimator:
    """Fleet-free fallback: node cost is the raw task size, edges are free."""
    return PathCostEstimator(node_cost=lambda t: t.size_mcycles,
                             edge_cost=lambda p, c: 0.0)


def topological_order(tasks: Sequence[TaskSpec]) -> List[int]:
    ids = [t.id for t in tasks]
    by_id = {t.id: t for t in tasks}
    indeg = {t.id: 0 for t in tasks}
    children: Dict[int, List[int]] = {t.id: [] for t in tasks}
    for t in tasks:
        for p in t.predecessors:
            if p not in by_id:
                raise ValueError(f"predecessor {p} not in application")
            indeg[t.id] += 1
            children[p].append(t.id)
    frontier = sorted(i for i in ids if indeg[i] == 0)
    order: List[int] = []
    while frontier:
        v = frontier.pop(0)
        order.append(v)
        added = []
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                added.append(c)
        if added:
            frontier = sorted(frontier + added)
    if len(order) != len(ids):
        raise ValueError("not a DAG")
    return order


def critical_path_cost(dag: AppDag, estimator: PathCostEstimator) -> Tuple[float, Tuple[int, ...]]:
    """Cost and task-id sequence of the maximal-cost root-to-sink path.

    Cost of a path is the sum of node costs plus the sum of edge costs along
    it. Ties are broken toward the lexicographically smallest task-id
    sequence, so the result is unique and deterministic.
    """
    by_id = {t.id: t for t in dag.tasks}
    order = topological_order(dag.tasks)
    has_child: Set[int] = set()
    for t in dag.tasks:
        for p in t.predecessors:
            has_child.add(p)

    # best[v] = (cost, path tuple) of the best root-to-v path; candidates are
    # compared by (-cost, path) so max cost wins and ties go to the smaller
    # id sequence. Costs accumulate left-to-right exactly like a plain walk
    # along the path, so float results match an enumeration oracle bitwise.
    best: Dict[int, Tuple[float, Tuple[int, ...]]] = {}
    for v in order:
        task = by_id[v]
        node_c = estimator.node_cost(task)
        if not task.predecessors:
            best[v] = (node_c, (v,))
            continue
        cands = []
        for p in task.predecessors:
            pc, ppath = best[p]
            cands.append((pc + estimator.edge_cost(by_id[p], task) + node_c, ppath + (v,)))
        best[v] = min(cands, key=lambda c: (-c[0], c[1]))

    sinks = [v for v in order if v not in has_child]
    return min((best[v] for v in sinks), key=lambda c: (-c[0], c[1]))


def critical_path(dag: AppDag, estimator: PathCostEstimator) -> Set[int]:
    """Task ids on the maximal-cost root-to-sink path (see
    :func:`critical_path_cost` for the tie rule)."""
    return set(critical_path_cost(dag, estimator)[1])


def mark_critical(dag: AppDag, estimator: PathCostEstimator) -> AppDag:
    """Set ``critical_flags`` on the DAG in place and return it."""
    crit = critical_path(dag, estimator)
    dag.critical_flags = {t.id: (t.id in crit) for t in dag.tasks}
    return dag


def app_response_time_ms(dag: AppDag, placement: PlacementSet,
                         fleet: Sequence[ServerSpec], net: NetworkModel) -> float:
    """Application response time: sum of response times over critical tasks.

    Falls back to computing critical flags with the default estimator when
    the DAG carries none.
    """
    if dag.critical_flags is None:
        mark_critical(dag, default_estimator(fleet, net))
    total = 0.0
    for t in dag.tasks:
        if dag.is_critical(t.id):
            total += task_response_time_ms(t, placement, fleet, net)
    return total


# ---------------------------------------------------------------------------
# Weighted cost and constraints
# ---------------------------------------------------------------------------

def weighted_cost(lb_cost: float, rt_cost: float, weights: CostWeights, norm) -> float:
    """w1 * minmax(lb) + w2 * minmax(rt) in [0,1].

    ``norm`` must expose ``lb_range`` and ``rt_range`` RunningRange trackers
    (see :class:`fogsched.mdp.NormalizerState`). A degenerate range (max ==
    min, or nothing recorded yet) contributes 0 for that objective.
    """
    return float(weights.w1 * norm.lb_range.normalize(lb_cost)
                 + weights.w2 * norm.rt_range.normalize(rt_cost))


def validate_fleet(fleet: Sequence[ServerSpec]) -> List[Violation]:
    """C3 capacity checks plus id integrity (ids must be 0..n-1 in order)."""
    out: List[Violation] = []
    for i, s in enumerate(fleet):
        if s.id != i:
            out.append(Violation("C1", f"server ids must be 0..n-1 in order, got {s.id} at index {i}"))
        if s.cpu_cores < 1 or s.cpu_freq_mhz <= 0 or s.ram_size_gb <= 0:
            out.append(Violation("C3", f"server {s.id} must have positive capacity"))
    return out


def check_constraints(placement: PlacementSet, fleet: Sequence[ServerSpec],
                      states: Sequence[ServerState], apps: Sequence[AppDag],
                      weights: Optional[CostWeights] = None) -> List[Violation]:
    """Report every violated constraint; an empty list means all pass.

    Covers C1 (each task placed on exactly one known server), C2 (utilization
    bounds), C3 (positive capacity), C4 (task RAM fits its assigned server)
    and C6 (w1/w2 simplex, only when weights are given). C5 (precedence) is
    enforced structurally by the simulator and cannot be judged from a static
    placement.
    """
    out: List[Violation] = []
    n = len(fleet)

    out.extend(validate_fleet(fleet))

    for app in apps:
        for t in app.tasks:
            srv = placement.server_of(t.id)
            if srv is None:
                out.append(Violation("C1", f"task {t.id} has no server assigned"))
            elif not (0 <= srv < n):
                out.append(Violation("C1", f"task {t.id} assigned to unknown server {srv}"))
            elif t.ram_demand_gb >= fleet[srv].ram_size_gb:
                out.append(Violation("C4", f"task {t.id} RAM demand {t.ram_demand_gb} GB does not fit server {srv} ({fleet[srv].ram_size_gb} GB)"))

    for st in states:
        if not (0.0 <= st.cpu_utilization <= 1.0):
            out.append(Violation("C2", f"server {st.spec.id} CPU utilization {st.cpu_utilization} out of [0,1]"))
        if not (0.0 <= st.ram_utilization <= 1.0):
            out.append(Violation("C2", f"server {st.spec.id} RAM utilization {st.ram_utilization} out of [0,1]"))

    if weights is not None:
        out.extend(weights.violations())
    return out
