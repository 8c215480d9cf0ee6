"""Self-contained verification suites with independent oracles.

Each suite recomputes a derived quantity a second way (enumeration, naive
summation, brute force, manual bookkeeping) and compares. The suites are the
same code the acceptance tests call with pinned case counts; ``run_checks``
runs all of them and prints one machine-readable line per suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import neural
from .baselines.nsga2 import fast_nondominated_sort
from .domain import (AppDag, CostWeights, NetworkModel, PathCostEstimator,
                     ServerSpec, critical_path_cost, load_balance_cost,
                     mark_critical)
from .ppo import RolloutBuffer, Transition, compute_advantages
from .simulator import (DecisionLoop, RandomScheduler, SimEnv,
                        WorkloadProfile, generate_workload)


@dataclass
class CheckResult:
    suite: str
    cases: int
    failures: int
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        extra = f" {self.detail}" if self.detail else ""
        return f"check.{self.suite}: {status} cases={self.cases} failures={self.failures}{extra}"


# ---------------------------------------------------------------------------
# Gradient oracle: central differences
# ---------------------------------------------------------------------------

def check_gradients(draws_per_activation: int = 100, tol: float = 1e-4,
                    seed: int = 101) -> CheckResult:
    """Analytic backward pass vs central differences on random small nets.

    The loss is a random-target quadratic on the outputs, so the output
    gradient varies with the draw and both layers' parameter gradients are
    exercised.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = 0
    cases = 0
    for activation in ("tanh", "relu", "linear"):
        for _ in range(draws_per_activation):
            din = int(rng.integers(2, 8))
            dh = int(rng.integers(2, 7))
            dout = int(rng.integers(1, 6))
            params = neural.init_mlp(din, dh, dout, activation, rng)
            x = rng.normal(size=din)
            target = rng.normal(size=dout)
            err = neural.finite_difference_check(
                params, x,
                loss_fn=lambda out: float(((out - target) ** 2).sum()),
                loss_grad_fn=lambda out: 2.0 * (out - target),
            )
            worst = max(worst, err)
            cases += 1
            if not err < tol:
                failures += 1
    return CheckResult("gradient", cases, failures, f"max_rel_err={worst:.3e}")


# ---------------------------------------------------------------------------
# Advantage oracle: naive per-step summation
# ---------------------------------------------------------------------------

def check_advantages(buffers: int = 500, tol: float = 1e-10,
                     seed: int = 102) -> CheckResult:
    rng = np.random.default_rng(seed)
    failures = 0
    worst = 0.0
    for _ in range(buffers):
        n = int(rng.integers(1, 65))
        gamma = float(rng.choice([0.9, 0.99, rng.uniform(0.0, 1.0)]))
        rewards = rng.normal(size=n)
        values = rng.normal(size=n)
        boot = float(rng.normal())
        buf = RolloutBuffer()
        for t in range(n):
            buf.append(Transition(state=np.zeros(1), action=0,
                                  reward=float(rewards[t]),
                                  value=float(values[t]), log_prob=0.0,
                                  success=True))
        buf.bootstrap_value = boot
        fast = compute_advantages(buf, gamma)
        naive = np.empty(n)
        for t in range(n):
            ret = sum(gamma ** (k - t) * rewards[k] for k in range(t, n))
            ret += gamma ** (n - t) * boot
            naive[t] = ret - values[t]
        err = float(np.abs(fast - naive).max())
        worst = max(worst, err)
        if not err <= tol:
            failures += 1
    return CheckResult("advantage", buffers, failures, f"max_abs_err={worst:.3e}")


# ---------------------------------------------------------------------------
# Critical-path oracle: exhaustive path enumeration
# ---------------------------------------------------------------------------

def _enumerate_paths(dag: AppDag) -> List[Tuple[int, ...]]:
    children: Dict[int, List[int]] = {t.id: [] for t in dag.tasks}
    for t in dag.tasks:
        for p in t.predecessors:
            children[p].append(t.id)
    roots = [t.id for t in dag.tasks if not t.predecessors]
    paths: List[Tuple[int, ...]] = []

    def walk(node: int, acc: Tuple[int, ...]) -> None:
        if not children[node]:
            paths.append(acc)
            return
        for ch in sorted(children[node]):
            walk(ch, acc + (ch,))

    for r in sorted(roots):
        walk(r, (r,))
    return paths


def check_critical_path(dags: int = 200, seed: int = 103) -> CheckResult:
    """Marked path cost and identity vs all enumerated root-to-sink paths.

    Costs are drawn from a small integer set so equal-cost paths occur and
    the lexicographic tie rule is genuinely exercised.
    """
    rng = np.random.default_rng(seed)
    profile = WorkloadProfile(apps_per_episode=1, tasks_per_app=(2, 12),
                              dag_width=(1, 4))
    failures = 0
    for i in range(dags):
        app = generate_workload(profile, [seed, i])[0]
        node_costs = {t.id: float(rng.integers(1, 5)) for t in app.tasks}
        edge_costs = {(p, t.id): float(rng.integers(0, 3))
                      for t in app.tasks for p in t.predecessors}
        est = PathCostEstimator(
            node_cost=lambda t: node_costs[t.id],
            edge_cost=lambda u, v: edge_costs[(u.id, v.id)])
        got_cost, got_path = critical_path_cost(app, est)

        def path_cost(path: Tuple[int, ...]) -> float:
            c = sum(node_costs[v] for v in path)
            c += sum(edge_costs[(u, v)] for u, v in zip(path, path[1:]))
            return c

        all_paths = _enumerate_paths(app)
        best = max(path_cost(p) for p in all_paths)
        tied = sorted(p for p in all_paths if path_cost(p) == best)
        ok = math.isclose(got_cost, best, rel_tol=0, abs_tol=1e-12)
        ok = ok and got_path == tied[0]
        if ok:  # marked flags must be exactly the winning path
            mark_critical(app, est)
            flagged = {t.id for t in app.tasks if app.is_critical(t.id)}
            ok = flagged == set(tied[0])
        if not ok:
            failures += 1
    return CheckResult("critical_path", dags, failures)


# ---------------------------------------------------------------------------
# Pareto oracle: O(n^2) brute force
# ---------------------------------------------------------------------------

def check_pareto(clouds: int = 50, max_points: int = 200,
                 seed: int = 104) -> CheckResult:
    rng = np.random.default_rng(seed)
    failures = 0
    for i in range(clouds):
        n = int(rng.integers(1, max_points + 1))
        k = int(rng.choice([2, 2, 3]))
        pts = rng.integers(0, 10, size=(n, k)).astype(float)
        fronts = fast_nondominated_sort(pts)
        brute = [j for j in range(n)
                 if not np.any((pts <= pts[j]).all(axis=1) & (pts < pts[j]).any(axis=1))]
        covered = sorted(x for f in fronts for x in f)
        if fronts[0] != brute or covered != list(range(n)):
            failures += 1
    return CheckResult("pareto", clouds, failures)


# ---------------------------------------------------------------------------
# Variance oracle: manual two-pass population variance
# ---------------------------------------------------------------------------

def check_variance(cases: int = 200, tol: float = 1e-12,
                   seed: int = 105) -> CheckResult:
    rng = np.random.default_rng(seed)
    failures = 0
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 12))
        cpu = rng.uniform(0.0, 1.0, size=n)
        ram = rng.uniform(0.0, 1.0, size=n)
        a1 = float(rng.uniform(0.0, 1.0))
        w = CostWeights(a1=a1, a2=1.0 - a1)

        def popvar(xs) -> float:
            mean = sum(xs) / len(xs)
            return sum((x - mean) ** 2 for x in xs) / len(xs)

        want = w.a1 * popvar(list(cpu)) + w.a2 * popvar(list(ram))
        got = load_balance_cost(list(cpu), list(ram), w)
        err = abs(got - want)
        worst = max(worst, err)
        if not err <= tol:
            failures += 1
    return CheckResult("variance", cases, failures, f"max_abs_err={worst:.3e}")


# ---------------------------------------------------------------------------
# Conservation and replay
# ---------------------------------------------------------------------------

def _random_env(rng: np.random.Generator, seed: int) -> SimEnv:
    n = int(rng.integers(2, 7))
    fleet = [ServerSpec(i, int(rng.integers(1, 17)),
                        float(rng.integers(1000, 3300)),
                        float(rng.uniform(1.0, 64.0)), "fog")
             for i in range(n)]
    bw = rng.uniform(5.0, 30.0, size=(n, n))
    prop = rng.uniform(1.0, 20.0, size=(n, n))
    np.fill_diagonal(bw, 0.0)
    np.fill_diagonal(prop, 0.0)
    profile = WorkloadProfile(apps_per_episode=int(rng.integers(2, 6)))
    return SimEnv(fleet, NetworkModel(bw, prop), profile, seed=seed)


def _run_audited_episode(env: SimEnv, sched: RandomScheduler) -> List[str]:
    """Step the whole episode, auditing occupancy after every decision;
    returns the decision CSV lines."""
    loop = DecisionLoop(env, sched, CostWeights())
    lines = []
    while True:
        rec = loop.step()
        if rec is None:
            break
        env.audit()
        lines.append(rec.csv_line())
    env.drain()
    env.audit()
    return lines


def check_conservation(episodes: int = 100, seed: int = 106) -> CheckResult:
    """Utilization bookkeeping and deterministic replay.

    Per episode: utilizations stay within [0,1] and match the sum of resident
    shares after every decision, the drained fleet returns to its idle
    baseline, and a second identically seeded run reproduces the event log
    and the decision records bit for bit.
    """
    failures = 0
    for i in range(episodes):
        env = _random_env(np.random.default_rng([seed, i]), seed=i)
        sched = RandomScheduler(len(env.fleet), seed=i)
        try:
            lines = _run_audited_episode(env, sched)
            if any(u > 1e-12 for u in env.cpu_utils() + env.ram_utils()):
                raise AssertionError("fleet did not drain to idle")

            env2 = _random_env(np.random.default_rng([seed, i]), seed=i)
            sched2 = RandomScheduler(len(env2.fleet), seed=i)
            lines2 = _run_audited_episode(env2, sched2)
            if env.event_log != env2.event_log:
                raise AssertionError("event logs differ between replays")
            if lines != lines2:
                raise AssertionError("decision records differ between replays")
        except AssertionError:
            failures += 1
    return CheckResult("conservation", episodes, failures)


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

def run_checks(verbose: bool = True) -> List[CheckResult]:
    """Run every oracle suite; prints one line per suite plus a summary."""
    results = [
        check_gradients(),
        check_advantages(),
        check_critical_path(),
        check_pareto(),
        check_variance(),
        check_conservation(),
    ]
    if verbose:
        for res in results:
            print(res.line())
        good = sum(1 for r in results if r.passed)
        print(f"checks: {good}/{len(results)} suites passed")
    return results
