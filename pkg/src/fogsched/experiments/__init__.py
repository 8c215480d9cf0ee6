"""Experiment plumbing: configs, drivers, metrics files and figures."""

from .config import (ExperimentConfig, config_from_dict, config_to_dict,
                     load_config, reference_config, save_config)
from .metrics import (METRICS_HEADER, MetricsRecord, finalize_weighted_cost,
                      read_metrics, stable_lines, union_weighted_series,
                      write_metrics)
from .drivers import (CompareResult, EvalResult, OverheadResult, OverheadRow,
                      TrainingResult, make_scheduler, measure_overhead,
                      run_compare, run_evaluation, run_training,
                      updates_to_within)

__all__ = [
    "ExperimentConfig", "config_from_dict", "config_to_dict", "load_config",
    "reference_config", "save_config",
    "METRICS_HEADER", "MetricsRecord", "finalize_weighted_cost",
    "read_metrics", "stable_lines", "union_weighted_series", "write_metrics",
    "CompareResult", "EvalResult", "OverheadResult", "OverheadRow",
    "TrainingResult", "make_scheduler", "measure_overhead", "run_compare",
    "run_evaluation", "run_training", "updates_to_within",
]
