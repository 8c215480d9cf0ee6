"""Command-line entry point.

Subcommands: ``train`` (one run per seed), ``eval`` (greedy run from a
checkpoint on the scaled workload), ``compare`` (multi-algorithm convergence
study), ``overhead`` (per-decision latency with confidence intervals) and
``check`` (oracle suites; nonzero exit on failure).

Without ``--config`` the shipped reference environment is used. The output
directory defaults to $FOGSCHED_OUT, falling back to ./runs.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import List, Optional

from .checks import run_checks
from .experiments import (ExperimentConfig, load_config, measure_overhead,
                          reference_config, run_compare, run_evaluation,
                          run_training)
from .experiments.config import ALGORITHMS, OBJECTIVES, ConfigError

ENV_OUT = "FOGSCHED_OUT"


def _default_out() -> str:
    return os.environ.get(ENV_OUT, os.path.join(".", "runs"))


def _parse_seeds(text: str) -> List[int]:
    try:
        return [int(part) for part in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else reference_config()
    overrides = {}
    if getattr(args, "objective", None):
        overrides["objective"] = args.objective
    if getattr(args, "algo", None) and not isinstance(args.algo, list):
        overrides["algorithm"] = args.algo
    if getattr(args, "updates", None):
        overrides["updates"] = args.updates
    if overrides:
        cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _algo_list(args: argparse.Namespace) -> Optional[List[str]]:
    if not getattr(args, "algo", None):
        return None
    out: List[str] = []
    for entry in args.algo:
        out.extend(part for part in entry.split(",") if part)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fogsched",
        description="Adaptive task scheduling on heterogeneous server fleets.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, multi_algo: bool = False) -> None:
        p.add_argument("--config", help="experiment config file (YAML)")
        p.add_argument("--out", default=None,
                       help=f"output directory (default ${ENV_OUT} or ./runs)")
        p.add_argument("--objective", choices=OBJECTIVES)
        if multi_algo:
            p.add_argument("--algo", action="append",
                           help="algorithm, repeatable or comma-separated")
        else:
            p.add_argument("--algo", choices=ALGORITHMS)
        p.add_argument("--updates", type=int, help="policy-update budget")

    p_train = sub.add_parser("train", help="train one algorithm, one run per seed")
    common(p_train)
    p_train.add_argument("--seed", type=int, help="single seed (overrides --seeds)")
    p_train.add_argument("--seeds", type=_parse_seeds, help="comma-separated seeds")

    p_eval = sub.add_parser("eval", help="greedy evaluation from a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", help="agent checkpoint path")
    p_eval.add_argument("--seed", type=int, default=0)

    p_cmp = sub.add_parser("compare", help="multi-algorithm convergence study")
    common(p_cmp, multi_algo=True)
    p_cmp.add_argument("--seeds", type=_parse_seeds)

    p_ovh = sub.add_parser("overhead", help="per-decision latency comparison")
    common(p_ovh, multi_algo=True)
    p_ovh.add_argument("--rounds", type=int, default=100)
    p_ovh.add_argument("--apps-per-round", type=int, default=1)

    sub.add_parser("check", help="run the oracle suites")
    return parser


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = args.out or _default_out()
    seeds = [args.seed] if args.seed is not None else (args.seeds or cfg.seeds)
    for seed in seeds:
        run_dir = os.path.join(out, f"{cfg.algorithm}_{cfg.objective}_seed{seed}")
        result = run_training(cfg, seed, run_dir)
        print(f"seed {seed}: metrics {result.metrics_path}")
        if result.checkpoint_path:
            print(f"seed {seed}: checkpoint {result.checkpoint_path}")
        if result.figure_path:
            print(f"seed {seed}: figure {result.figure_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = args.out or _default_out()
    run_dir = os.path.join(out, f"eval_{cfg.algorithm}_{cfg.objective}_seed{args.seed}")
    result = run_evaluation(cfg, args.checkpoint, args.seed, run_dir)
    print(f"metrics {result.metrics_path}")
    if result.figure_path:
        print(f"figure {result.figure_path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = args.out or _default_out()
    run_dir = os.path.join(out, f"compare_{cfg.objective}")
    result = run_compare(cfg, algos=_algo_list(args), seeds=args.seeds,
                         out_dir=run_dir, updates=args.updates)
    for row in result.summary:
        print(f"{row['algorithm']} seed {row['seed']}: "
              f"first10={row['first_mean']:.4f} last10={row['last_mean']:.4f} "
              f"updates_to_10pct={row['updates_to_10pct']}")
    print(f"summary {result.summary_path}")
    if result.figure_path:
        print(f"figure {result.figure_path}")
    return 0


def cmd_overhead(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = args.out or _default_out()
    result = measure_overhead(cfg, algorithms=_algo_list(args),
                              rounds=args.rounds,
                              apps_per_round=args.apps_per_round,
                              out_dir=os.path.join(out, "overhead"))
    for row in result.rows:
        print(f"{row.algorithm}: per-round {row.t_ave_ms:.3f} ms "
              f"(ci95 {row.t_ci95_ms:.3f}), per-decision {row.per_decision_ms:.3f} ms "
              f"(ci95 {row.per_decision_ci95_ms:.3f})")
    print(f"report {result.csv_path}")
    if result.figure_path:
        print(f"figure {result.figure_path}")
    return 0


def cmd_check(_: argparse.Namespace) -> int:
    results = run_checks(verbose=True)
    return 0 if all(r.passed for r in results) else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare,
                "overhead": cmd_overhead, "check": cmd_check}
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
