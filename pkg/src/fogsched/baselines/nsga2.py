"""NSGA-II metaheuristic baseline.

Plans whole applications at once: the genome assigns one server per pending
task and fitness is the pair (summed load-balance cost, critical-path
response time), evaluated against a static snapshot of the environment (no
completions or releases are simulated during evaluation, so the plan is an
estimate, as it would be for a real ahead-of-time planner). Infeasible genes
add large objective penalties. Fitness evaluation is vectorized across the
population.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..domain import (AppDag, CostWeights, PlacementSet, mark_critical,
                      topological_order)
from ..simulator import DecisionContext, Scheduler, SimEnv

VIOLATION_PENALTY = 1e6


@dataclass(frozen=True)
class Nsga2Config:
    population: int = 200
    generations: int = 100
    crossover_prob: float = 0.9
    mutation_prob: Optional[float] = None  # default 1/genome_length


def fast_nondominated_sort(points: Sequence[Sequence[float]]) -> List[List[int]]:
    """Deb's front peeling; front 0 is the exact Pareto set (minimization).

    A point dominates another when it is <= in every objective and < in at
    least one; duplicates do not dominate each other.
    """
    f = np.asarray(points, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("points must be a nonempty 2-D array of objectives")
    n = f.shape[0]
    le = np.ones((n, n), dtype=bool)
    lt = np.zeros((n, n), dtype=bool)
    for j in range(f.shape[1]):
        col = f[:, j]
        le &= col[:, None] <= col[None, :]
        lt |= col[:, None] < col[None, :]
    dom = le & lt  # dom[i, j]: i dominates j
    n_dominators = dom.sum(axis=0)
    fronts: List[List[int]] = []
    assigned = np.zeros(n, dtype=bool)
    current = np.where(n_dominators == 0)[0]
    while current.size:
        fronts.append(current.tolist())
        assigned[current] = True
        released = dom[current].sum(axis=0)
        n_dominators = n_dominators - released
        current = np.where((n_dominators == 0) & ~assigned)[0]
    return fronts


def crowding_distance(points: Sequence[Sequence[float]]) -> np.ndarray:
    """Per-point crowding distance within one front.

    Boundary points get +inf per objective; interior points accumulate the
    normalized gap between their neighbors. Fronts of size <= 2 are all
    infinite.
    """
    f = np.asarray(points, dtype=np.float64)
    n, k = f.shape
    dist = np.zeros(n, dtype=np.float64)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for j in range(k):
        order = np.argsort(f[:, j], kind="stable")
        vals = f[order, j]
        span = vals[-1] - vals[0]
        if span > 0:
            dist[order[1:-1]] += (vals[2:] - vals[:-2]) / span
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
    return dist


class BatchProblem:
    """One application batch against a fleet snapshot.

    Objectives (both minimized): f1 = sum over placements of the fleet
    load-balance cost after each placement, f2 = sum of response times over
    critical-path tasks. Placements are simulated in topological order on
    fixed snapshot utilizations.
    """

    def __init__(self, fleet, net, cpu_utils, ram_utils, app: AppDag,
                 weights: CostWeights):
        self.weights = weights
        self.n_servers = len(fleet)
        self.cores = np.array([s.cpu_cores for s in fleet], dtype=np.float64)
        self.freq = np.array([s.cpu_freq_mhz for s in fleet], dtype=np.float64)
        self.ram = np.array([s.ram_size_gb for s in fleet], dtype=np.float64)
        self.bw = np.asarray(net.bandwidth_mbps, dtype=np.float64)
        self.prop = np.asarray(net.propagation_ms, dtype=np.float64)
        self.cpu0 = np.asarray(cpu_utils, dtype=np.float64)
        self.ram0 = np.asarray(ram_utils, dtype=np.float64)

        order = topological_order(app.tasks)
        by_id = {t.id: t for t in app.tasks}
        pos = {tid: i for i, tid in enumerate(order)}
        self.task_ids = list(order)
        self.tasks = [by_id[tid] for tid in order]
        if app.critical_flags is None:
            raise ValueError("application lacks critical flags")
        self.critical = [app.is_critical(tid) for tid in order]
        # per task: list of (parent position, packet MB)
        self.parents: List[List[Tuple[int, float]]] = [
            [(pos[p], t.packet_mb.get(p, 0.0)) for p in t.predecessors]
            for t in self.tasks
        ]

    @classmethod
    def from_env(cls, env: SimEnv, app: AppDag, weights: CostWeights) -> "BatchProblem":
        if app.critical_flags is None:
            mark_critical(app, env.estimator)
        return cls(env.fleet, env.net, env.cpu_utils(), env.ram_utils(), app, weights)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def evaluate(self, genes: np.ndarray) -> np.ndarray:
        """Objective pairs for a (population, n_tasks) gene matrix."""
        genes = np.atleast_2d(np.asarray(genes, dtype=int))
        pop = genes.shape[0]
        rows = np.arange(pop)
        cpu = np.broadcast_to(self.cpu0, (pop, self.n_servers)).copy()
        ram = np.broadcast_to(self.ram0, (pop, self.n_servers)).copy()
        psi_sum = np.zeros(pop)
        omega_cp = np.zeros(pop)
        violations = np.zeros(pop)
        w = self.weights
        for i, task in enumerate(self.tasks):
            s = genes[:, i]
            cpu_after = cpu[rows, s] + task.cpu_demand / self.cores[s]
            ram_after = ram[rows, s] + task.ram_demand_gb / self.ram[s]
            violations += (cpu_after > 1.0) | (ram_after > 1.0)
            cpu[rows, s] = cpu_after
            ram[rows, s] = ram_after
            psi_sum += w.a1 * cpu.var(axis=1) + w.a2 * ram.var(axis=1)
            if self.critical[i]:
                proc = task.size_mcycles / self.freq[s] * 1000.0
                trt = np.zeros(pop)
                for parent_pos, packet in self.parents[i]:
                    ps = genes[:, parent_pos]
                    same = ps == s
                    # bw diagonal is 0; mask it before dividing
                    bw = np.where(same, 1.0, self.bw[ps, s])
                    hop = np.where(same, 0.0,
                                   packet / bw * 1000.0 + self.prop[ps, s])
                    trt = np.maximum(trt, hop)
                omega_cp += trt + proc
        pen = VIOLATION_PENALTY * violations
        return np.stack([psi_sum + pen, omega_cp + pen], axis=1)


def _rank_and_crowding(objs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, List[List[int]]]:
    fronts = fast_nondominated_sort(objs)
    rank = np.empty(objs.shape[0], dtype=int)
    crowd = np.empty(objs.shape[0], dtype=np.float64)
    for r, front in enumerate(fronts):
        rank[front] = r
        crowd[front] = crowding_distance(objs[front])
    return rank, crowd, fronts


def _tournament(rank, crowd, rng, count) -> np.ndarray:
    """Binary tournaments on (rank asc, crowding desc); ties keep the first."""
    a = rng.integers(len(rank), size=count)
    b = rng.integers(len(rank), size=count)
    a_wins = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] > crowd[b]))
    return np.where(a_wins, a, b)


def nsga2_evolve(problem: BatchProblem, cfg: Nsga2Config, seed,
                 history: Optional[List[np.ndarray]] = None) -> PlacementSet:
    """Evolve placements for the batch and return the preferred front-0 one.

    Uniform crossover, per-gene uniform mutation, binary tournament mating
    selection and elitist (parents + offspring) environmental selection with
    crowding truncation. The returned individual minimizes the weighted sum
    of front-0 min-max normalized objectives. When ``history`` is given, the
    raw front-0 objective array of each generation's population is appended.
    """
    rng = np.random.default_rng(seed)
    pop_n = cfg.population
    m = problem.n_tasks
    p_mut = cfg.mutation_prob if cfg.mutation_prob is not None else 1.0 / m
    pop = rng.integers(0, problem.n_servers, size=(pop_n, m))
    objs = problem.evaluate(pop)
    rank, crowd, _ = _rank_and_crowding(objs)

    for _ in range(cfg.generations):
        parents_a = _tournament(rank, crowd, rng, pop_n)
        parents_b = _tournament(rank, crowd, rng, pop_n)
        pa, pb = pop[parents_a], pop[parents_b]
        cross = rng.random(pop_n) < cfg.crossover_prob
        mask = rng.random((pop_n, m)) < 0.5
        children = np.where(cross[:, None] & mask, pb, pa)
        mut = rng.random((pop_n, m)) < p_mut
        children = np.where(mut, rng.integers(0, problem.n_servers, size=(pop_n, m)), children)

        child_objs = problem.evaluate(children)
        all_pop = np.vstack([pop, children])
        all_objs = np.vstack([objs, child_objs])
        all_rank, all_crowd, fronts = _rank_and_crowding(all_objs)
        chosen: List[int] = []
        for front in fronts:
            if len(chosen) + len(front) <= pop_n:
                chosen.extend(front)
            else:
                cd = all_crowd[front]
                order = np.argsort(-cd, kind="stable")
                chosen.extend(int(front[i]) for i in order[: pop_n - len(chosen)])
                break
        pop = all_pop[chosen]
        objs = all_objs[chosen]
        # whole fronts survive up to the split, so union ranks restricted to
        # the survivors are exactly their own front ranks
        rank = all_rank[chosen]
        crowd = all_crowd[chosen]
        if history is not None:
            history.append(objs[rank == 0].copy())

    front0 = np.where(rank == 0)[0]
    f = objs[front0]
    lo, hi = f.min(axis=0), f.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    normed = np.where(hi > lo, (f - lo) / span, 0.0)
    score = problem.weights.w1 * normed[:, 0] + problem.weights.w2 * normed[:, 1]
    best = pop[front0[int(np.argmin(score))]]
    placement = PlacementSet()
    for tid, srv in zip(problem.task_ids, best):
        placement.assign(tid, int(srv))
    return placement


class Nsga2Scheduler(Scheduler):
    """Plans each application with one evolve call when its first task shows
    up, then serves the cached placement per decision. Does not learn."""

    def __init__(self, cfg: Optional[Nsga2Config] = None,
                 weights: Optional[CostWeights] = None, seed: int = 0):
        self.cfg = cfg or Nsga2Config()
        self.weights = weights or CostWeights()
        self.seed = seed
        self.plans: Dict[int, int] = {}
        self.evolve_calls = 0

    def select(self, state: np.ndarray, ctx: DecisionContext) -> int:
        tid = ctx.task.id
        if tid not in self.plans:
            problem = BatchProblem.from_env(ctx.env, ctx.app, self.weights)
            placement = nsga2_evolve(problem, self.cfg,
                                     [self.seed, 6, self.evolve_calls])
            self.plans.update(placement.assignment)
            self.evolve_calls += 1
        return self.plans[tid]

    def on_episode_reset(self) -> None:
        # task ids restart each episode; stale plans must not leak across
        self.plans.clear()
