"""Baseline schedulers: tabular Q-Learning, DQN, and NSGA-II."""

from .qlearning import (QLearningConfig, QLearningScheduler, QTable,
                        discretize_state, feature_ranges, load_qtable,
                        qlearning_step, save_qtable)
from .dqn import DqnAgent, DqnConfig, DqnScheduler, ReplayBuffer, dqn_step
from .nsga2 import (BatchProblem, Nsga2Config, Nsga2Scheduler,
                    crowding_distance, fast_nondominated_sort, nsga2_evolve)

__all__ = [
    "QLearningConfig", "QLearningScheduler", "QTable", "discretize_state",
    "feature_ranges", "load_qtable", "qlearning_step", "save_qtable",
    "DqnAgent", "DqnConfig", "DqnScheduler", "ReplayBuffer", "dqn_step",
    "BatchProblem", "Nsga2Config", "Nsga2Scheduler", "crowding_distance",
    "fast_nondominated_sort", "nsga2_evolve",
]
