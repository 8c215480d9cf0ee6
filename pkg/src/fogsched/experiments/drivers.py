"""Training, evaluation, comparison and overhead drivers.

The common x-axis unit is the policy update: one optimization cycle for the
neural agents, one block of table updates for tabular Q-learning, and one
whole-application evolve call for the genetic planner. Records therefore
aggregate different decision counts per update (a fixed block for the
learning agents, one application's decisions for the planner), but every
record is the mean over the decisions that update covers.

All drivers are deterministic under (config, seed) except for the wall-clock
column, which measures real time around the scheduler's select call and
nothing else (environment stepping is excluded by construction).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..baselines import (DqnAgent, DqnScheduler, Nsga2Scheduler,
                         QLearningScheduler, feature_ranges, load_qtable,
                         save_qtable)
from ..mdp import FeatureCaps
from ..ppo import PpoAgent, PpoScheduler
from ..simulator import (DecisionLoop, DecisionRecord, Scheduler, SimEnv,
                         WorkloadProfile)
from . import figures
from .config import ExperimentConfig
from .metrics import (MetricsRecord, finalize_weighted_cost,
                      union_weighted_series, write_metrics)

_REWARD_FIELD = {"load_balance": "r_lb", "response_time": "r_rt",
                 "weighted": "r_weighted"}


# ---------------------------------------------------------------------------
# Scheduler construction
# ---------------------------------------------------------------------------

def _ensure_compat(path: str, state_dim: int, n_actions: int,
                   caps: FeatureCaps, n_servers: int) -> None:
    if state_dim != caps.state_dim or n_actions != n_servers:
        raise ValueError(
            f"checkpoint {path} incompatible with fleet: trained for "
            f"state_dim={state_dim}, actions={n_actions}; this fleet gives "
            f"state_dim={caps.state_dim}, actions={n_servers}")


def make_scheduler(cfg: ExperimentConfig, seed: int, greedy: bool = False,
                   checkpoint: Optional[str] = None) -> Scheduler:
    """Build the configured algorithm's scheduler, optionally from a saved
    checkpoint (required for greedy evaluation of the learning agents)."""
    n = len(cfg.fleet)
    caps = FeatureCaps(max_servers=n)
    algo = cfg.algorithm
    if algo == "ppo":
        if checkpoint:
            agent = PpoAgent.load(checkpoint)
            _ensure_compat(checkpoint, agent.state_dim, agent.n_actions, caps, n)
        else:
            agent = PpoAgent(caps.state_dim, n, hyper=cfg.ppo, seed=seed)
        return PpoScheduler(agent, mode="greedy" if greedy else "sample")
    if algo == "qlearning":
        ranges = feature_ranges(cfg.fleet, cfg.network, cfg.profile, caps)
        sched = QLearningScheduler(n, ranges, cfg=cfg.qlearning, seed=seed,
                                   greedy=greedy)
        if checkpoint:
            table = load_qtable(checkpoint, cfg.qlearning)
            if table.n_actions != n:
                raise ValueError(f"checkpoint {checkpoint} incompatible with "
                                 f"fleet: {table.n_actions} actions vs {n} servers")
            sched.agent = table
        return sched
    if algo == "dqn":
        if checkpoint:
            agent = DqnAgent.load(checkpoint)
            _ensure_compat(checkpoint, agent.state_dim, agent.n_actions, caps, n)
        else:
            agent = DqnAgent(caps.state_dim, n, cfg=cfg.dqn, seed=seed)
        return DqnScheduler(agent, greedy=greedy)
    if algo == "nsga2":
        return Nsga2Scheduler(cfg.nsga2, cfg.weights, seed=seed)
    raise ValueError(f"unknown algorithm {algo!r}")


def _save_agent(cfg: ExperimentConfig, scheduler: Scheduler,
                out_dir: str) -> Optional[str]:
    if cfg.algorithm in ("ppo", "dqn"):
        path = os.path.join(out_dir, "checkpoint.bin")
        scheduler.agent.save(path)
        return path
    if cfg.algorithm == "qlearning":
        path = os.path.join(out_dir, "qtable.txt")
        save_qtable(scheduler.agent, path)
        return path
    return None  # the genetic planner carries no learned state


# ---------------------------------------------------------------------------
# Update loops
# ---------------------------------------------------------------------------

def _next_episode(loop: DecisionLoop) -> None:
    loop.env.reset(loop.env.episode + 1)
    loop.on_episode_reset()


def _aggregate(update: int, recs: Sequence[DecisionRecord],
               objective: str) -> MetricsRecord:
    lb = float(np.mean([r.lb_cost for r in recs]))
    rts = [r.rt_cost for r in recs if not math.isnan(r.rt_cost)]
    rt = float(np.mean(rts)) if rts else float("nan")
    reward_field = _REWARD_FIELD[objective]
    reward_mean = float(np.mean([getattr(r, reward_field) for r in recs]))
    success = float(np.mean([1.0 if r.success else 0.0 for r in recs]))
    wall = float(np.mean([r.select_ms for r in recs]))
    cost = {"load_balance": lb, "response_time": rt}.get(objective, float("nan"))
    return MetricsRecord(update, cost, reward_mean, success, lb, rt, wall)


def _run_update_blocks(loop: DecisionLoop, scheduler: Scheduler, updates: int,
                       block: int, objective: str) -> List[MetricsRecord]:
    """Fixed-size decision blocks; the environment resets seamlessly when an
    episode's workload runs out, so every block holds exactly ``block``
    decisions and the block boundary always has a real bootstrap state."""
    records = []
    for u in range(updates):
        recs: List[DecisionRecord] = []
        while len(recs) < block:
            rec = loop.step()
            if rec is None:
                _next_episode(loop)
                continue
            recs.append(rec)
        next_state = loop.peek_state()
        if next_state is None:
            _next_episode(loop)
            next_state = loop.peek_state()
        scheduler.end_block(next_state)
        records.append(_aggregate(u, recs, objective))
    return records


def _run_app_buckets(loop: DecisionLoop, n_apps: int) -> List[List[DecisionRecord]]:
    """Attribute each decision to its application, in order of first
    appearance, until ``n_apps`` applications have been served and the next
    new application would exceed the budget. Tail applications may be cut
    short when their remaining tasks are gated behind the stopping point."""
    env = loop.env
    buckets: Dict[Tuple[int, int], List[DecisionRecord]] = {}
    while True:
        task = env.peek_task()
        if task is None:
            _next_episode(loop)
            continue
        key = (env.episode, env.app_of(task.id).app_id)
        if key not in buckets and len(buckets) >= n_apps:
            break
        rec = loop.step()
        buckets.setdefault(key, []).append(rec)
    return list(buckets.values())


def _run_updates(cfg: ExperimentConfig, scheduler: Scheduler, seed: int,
                 updates: int, profile: WorkloadProfile) -> List[MetricsRecord]:
    env = SimEnv(cfg.fleet, cfg.network, profile, seed=seed)
    loop = DecisionLoop(env, scheduler, cfg.weights, objective=cfg.objective)
    if cfg.algorithm == "nsga2":
        groups = _run_app_buckets(loop, updates)
        records = [_aggregate(u, recs, cfg.objective)
                   for u, recs in enumerate(groups)]
    else:
        records = _run_update_blocks(loop, scheduler, updates,
                                     cfg.ppo.horizon, cfg.objective)
    if cfg.objective == "weighted":
        finalize_weighted_cost(records, cfg.weights)
    return records


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

@dataclass
class TrainingResult:
    metrics_path: str
    checkpoint_path: Optional[str]
    figure_path: Optional[str]
    records: List[MetricsRecord]


@dataclass
class EvalResult:
    metrics_path: str
    figure_path: Optional[str]
    records: List[MetricsRecord]


def run_training(cfg: ExperimentConfig, seed: int, out_dir: str,
                 updates: Optional[int] = None,
                 render: bool = True) -> TrainingResult:
    """Train the configured algorithm for the update budget and persist the
    metrics file, the agent checkpoint and (optionally) the convergence
    figure under ``out_dir``."""
    cfg.validate()
    n_updates = updates if updates is not None else cfg.updates
    os.makedirs(out_dir, exist_ok=True)
    scheduler = make_scheduler(cfg, seed)
    records = _run_updates(cfg, scheduler, seed, n_updates, cfg.profile)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    write_metrics(metrics_path, records)
    checkpoint_path = _save_agent(cfg, scheduler, out_dir)
    figure_path = None
    if render:
        figure_path = os.path.join(out_dir, "convergence.png")
        figures.render_convergence(
            figure_path,
            {cfg.algorithm: np.array([r.cost for r in records])},
            cfg.objective,
            f"{cfg.algorithm} / {cfg.objective} / seed {seed}")
    return TrainingResult(metrics_path, checkpoint_path, figure_path, records)


def run_evaluation(cfg: ExperimentConfig, checkpoint: Optional[str], seed: int,
                   out_dir: str, updates: Optional[int] = None,
                   render: bool = True) -> EvalResult:
    """Greedy-action run on the shifted workload (task sizes scaled by
    ``eval_scale``), recording the same per-update metrics."""
    cfg.validate()
    if checkpoint is None and cfg.algorithm != "nsga2":
        raise ValueError(f"evaluation of {cfg.algorithm} needs a checkpoint")
    n_updates = updates if updates is not None else cfg.eval_updates
    os.makedirs(out_dir, exist_ok=True)
    scheduler = make_scheduler(cfg, seed, greedy=True, checkpoint=checkpoint)
    profile = cfg.profile.scaled(cfg.eval_scale)
    records = _run_updates(cfg, scheduler, seed, n_updates, profile)
    metrics_path = os.path.join(out_dir, "eval_metrics.csv")
    write_metrics(metrics_path, records)
    figure_path = None
    if render:
        figure_path = os.path.join(out_dir, "eval.png")
        figures.render_convergence(
            figure_path,
            {cfg.algorithm: np.array([r.cost for r in records])},
            cfg.objective,
            f"eval {cfg.algorithm} / {cfg.objective} / seed {seed}")
    return EvalResult(metrics_path, figure_path, records)


def updates_to_within(series: Sequence[float], frac: float = 0.10,
                      window: int = 5, final_window: int = 10) -> int:
    """Settling time of a cost curve, in updates.

    The threshold sits ``frac`` of the total improvement above the final
    level (mean of the last ``final_window``; the starting level is the mean
    of the first ``final_window``). Returns the last update whose
    trailing-``window`` smoothed cost is still above that threshold, plus
    one, i.e. the update from which the curve stays settled. A curve that
    never leaves the band settles at 0. Curves that never improved have zero
    band width, so any excursion above the final level counts against them.
    """
    y = np.asarray(series, dtype=float)
    n = len(y)
    smoothed = np.array([np.nanmean(y[max(0, i - window + 1):i + 1])
                         for i in range(n)])
    final = float(np.nanmean(y[-final_window:]))
    start = float(np.nanmean(y[:final_window]))
    if math.isnan(final) or math.isnan(start):
        return n
    threshold = final + frac * max(start - final, 0.0)
    outside = np.where(smoothed > threshold)[0]
    return int(outside[-1]) + 1 if outside.size else 0


@dataclass
class CompareResult:
    runs: Dict[Tuple[str, int], List[MetricsRecord]]
    series: Dict[Tuple[str, int], np.ndarray]
    summary: List[Dict[str, object]]
    summary_path: Optional[str]
    figure_path: Optional[str]


def run_compare(cfg: ExperimentConfig, algos: Optional[Sequence[str]] = None,
                seeds: Optional[Sequence[int]] = None,
                out_dir: Optional[str] = None,
                updates: Optional[int] = None,
                render: bool = True) -> CompareResult:
    """Convergence study across algorithms and seeds on one objective.

    For the weighted objective the per-run cost series are renormalized over
    the union of all runs so every curve shares one scale; single-objective
    runs compare raw costs directly. The summary holds, per run, the first-10
    and last-10 update means and the settling time in updates.
    """
    cfg.validate()
    algo_list = list(algos) if algos else ["ppo", "qlearning", "nsga2"]
    seed_list = list(seeds) if seeds else list(cfg.seeds)
    n_updates = updates if updates is not None else cfg.updates

    runs: Dict[Tuple[str, int], List[MetricsRecord]] = {}
    for algo in algo_list:
        acfg = replace(cfg, algorithm=algo)
        for seed in seed_list:
            sub = os.path.join(out_dir, f"{algo}_seed{seed}") if out_dir else None
            if sub:
                result = run_training(acfg, seed, sub, n_updates, render=False)
                runs[(algo, seed)] = result.records
            else:
                scheduler = make_scheduler(acfg, seed)
                runs[(algo, seed)] = _run_updates(acfg, scheduler, seed,
                                                  n_updates, acfg.profile)

    if cfg.objective == "weighted":
        series = union_weighted_series(runs, cfg.weights)
    else:
        series = {key: np.array([r.cost for r in recs])
                  for key, recs in runs.items()}

    summary: List[Dict[str, object]] = []
    for (algo, seed), ys in series.items():
        summary.append({
            "algorithm": algo,
            "seed": seed,
            "first_mean": float(np.nanmean(ys[:10])),
            "last_mean": float(np.nanmean(ys[-10:])),
            "updates_to_10pct": updates_to_within(ys),
        })

    summary_path = figure_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        summary_path = os.path.join(out_dir, "compare.csv")
        with open(summary_path, "w", encoding="utf-8") as fh:
            fh.write("algorithm,seed,first_mean,last_mean,updates_to_10pct\n")
            for row in summary:
                fh.write(f"{row['algorithm']},{row['seed']},"
                         f"{row['first_mean']!r},{row['last_mean']!r},"
                         f"{row['updates_to_10pct']}\n")
        if render:
            mean_series = {}
            for algo in algo_list:
                stack = np.stack([series[(algo, s)] for s in seed_list])
                mean_series[algo] = np.nanmean(stack, axis=0)
            figure_path = os.path.join(out_dir, "compare.png")
            figures.render_convergence(figure_path, mean_series, cfg.objective,
                                       f"algorithm comparison / {cfg.objective}")
    return CompareResult(runs, series, summary, summary_path, figure_path)


@dataclass
class OverheadRow:
    algorithm: str
    rounds: int
    decisions: int
    t_ave_ms: float
    t_ci95_ms: float
    per_decision_ms: float
    per_decision_ci95_ms: float


@dataclass
class OverheadResult:
    rows: List[OverheadRow]
    csv_path: Optional[str]
    figure_path: Optional[str]


def _ci95(samples: np.ndarray) -> float:
    return float(1.96 * np.std(samples, ddof=1) / math.sqrt(len(samples)))


def measure_overhead(cfg: ExperimentConfig,
                     algorithms: Optional[Sequence[str]] = None,
                     rounds: int = 100, apps_per_round: int = 1,
                     out_dir: Optional[str] = None, render: bool = True,
                     scheduler_factories: Optional[Dict[str, Callable[[int], Scheduler]]] = None,
                     ) -> OverheadResult:
    """Mean scheduling time per round and per decision, with 95% confidence
    intervals over rounds. A round is ``apps_per_round`` applications'
    decisions; only the select/plan call is inside the timed region."""
    cfg.validate()
    if rounds < 30:
        raise ValueError("need at least 30 rounds for the normal-approximation interval")
    algo_list = list(algorithms) if algorithms else ["ppo", "nsga2"]
    factories = scheduler_factories or {}
    seed = cfg.seeds[0]

    rows: List[OverheadRow] = []
    for name in algo_list:
        if name in factories:
            scheduler = factories[name](seed)
            acfg = cfg
        else:
            acfg = replace(cfg, algorithm=name)
            scheduler = make_scheduler(acfg, seed)
        env = SimEnv(acfg.fleet, acfg.network, acfg.profile, seed=seed)
        loop = DecisionLoop(env, scheduler, acfg.weights, objective=acfg.objective)
        buckets = _run_app_buckets(loop, rounds * apps_per_round)
        totals = np.array([
            sum(r.select_ms for recs in buckets[k * apps_per_round:(k + 1) * apps_per_round]
                for r in recs)
            for k in range(rounds)])
        counts = np.array([
            sum(len(recs) for recs in buckets[k * apps_per_round:(k + 1) * apps_per_round])
            for k in range(rounds)])
        per_decision = totals / counts
        rows.append(OverheadRow(
            algorithm=name, rounds=rounds, decisions=int(counts.sum()),
            t_ave_ms=float(np.mean(totals)), t_ci95_ms=_ci95(totals),
            per_decision_ms=float(np.mean(per_decision)),
            per_decision_ci95_ms=_ci95(per_decision)))

    csv_path = figure_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "overhead.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("algorithm,rounds,decisions,t_ave_ms,t_ci95_ms,"
                     "per_decision_ms,per_decision_ci95_ms\n")
            for row in rows:
                fh.write(f"{row.algorithm},{row.rounds},{row.decisions},"
                         f"{row.t_ave_ms!r},{row.t_ci95_ms!r},"
                         f"{row.per_decision_ms!r},{row.per_decision_ci95_ms!r}\n")
        if render:
            figure_path = os.path.join(out_dir, "overhead.png")
            figures.render_overhead(
                figure_path,
                [(r.algorithm, r.per_decision_ms, r.per_decision_ci95_ms)
                 for r in rows])
    return OverheadResult(rows, csv_path, figure_path)
