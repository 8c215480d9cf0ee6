"""Shared fixtures: small fleets, canned DAGs, and the acceptance study.

The convergence study used by the two statistical acceptance checks is
session-scoped because it is by far the most expensive thing in the suite;
both tests read from the same run.
"""

import numpy as np
import pytest

from fogsched.domain import (AppDag, CostWeights, NetworkModel, ServerSpec,
                             TaskSpec)
from fogsched.simulator import WorkloadProfile


def make_net(n, bw=25.0, prop=3.0):
    b = np.full((n, n), float(bw))
    p = np.full((n, n), float(prop))
    np.fill_diagonal(b, 0.0)
    np.fill_diagonal(p, 0.0)
    return NetworkModel(bandwidth_mbps=b, propagation_ms=p)


@pytest.fixture
def small_fleet():
    return [
        ServerSpec(id=0, cpu_cores=2, cpu_freq_mhz=2000.0, ram_size_gb=8.0),
        ServerSpec(id=1, cpu_cores=4, cpu_freq_mhz=3000.0, ram_size_gb=16.0),
        ServerSpec(id=2, cpu_cores=1, cpu_freq_mhz=1500.0, ram_size_gb=2.0),
    ]


@pytest.fixture
def small_net(small_fleet):
    return make_net(len(small_fleet))


@pytest.fixture
def tiny_profile():
    # small enough that unit tests stay fast, busy enough to exercise queues
    return WorkloadProfile(
        apps_per_episode=3,
        tasks_per_app=(3, 5),
        dag_width=(1, 2),
        size_mcycles=(400.0, 1200.0),
        ram_demand_gb=(0.1, 0.8),
        cpu_demand=(0.1, 0.4),
        packet_mb=(2.0, 10.0),
        arrival_mode="fixed",
        arrival_interval_ms=200.0,
    )


@pytest.fixture
def equal_weights():
    return CostWeights(a1=0.5, a2=0.5, w1=0.5, w2=0.5)


def chain_dag(sizes, app_id=0, packet=5.0):
    """a -> b -> c ... with the given node sizes."""
    tasks = []
    for i, s in enumerate(sizes):
        preds = (i - 1,) if i else ()
        packets = {i - 1: packet} if i else {}
        tasks.append(TaskSpec(id=i, app_id=app_id, size_mcycles=float(s),
                              ram_demand_gb=0.5, cpu_demand=0.2,
                              predecessors=preds, packet_mb=packets))
    return AppDag(app_id=app_id, tasks=tasks)


def diamond_dag(size_b=2000.0, size_c=500.0, app_id=0):
    """a -> {b, c} -> d; b is the expensive branch."""
    t = [
        TaskSpec(id=0, app_id=app_id, size_mcycles=1000.0, ram_demand_gb=0.5,
                 cpu_demand=0.2),
        TaskSpec(id=1, app_id=app_id, size_mcycles=size_b, ram_demand_gb=0.5,
                 cpu_demand=0.2, predecessors=(0,), packet_mb={0: 5.0}),
        TaskSpec(id=2, app_id=app_id, size_mcycles=size_c, ram_demand_gb=0.5,
                 cpu_demand=0.2, predecessors=(0,), packet_mb={0: 5.0}),
        TaskSpec(id=3, app_id=app_id, size_mcycles=1000.0, ram_demand_gb=0.5,
                 cpu_demand=0.2, predecessors=(1, 2),
                 packet_mb={1: 5.0, 2: 5.0}),
    ]
    return AppDag(app_id=app_id, tasks=t)


@pytest.fixture(scope="session")
def compare_study():
    """5-seed, 100-update convergence study on the reference environment.

    Shared by the learning-direction and convergence-speed acceptance tests.
    Runs without file output.
    """
    import time

    from fogsched.experiments.config import reference_config
    from fogsched.experiments.drivers import run_compare

    cfg = reference_config()
    t0 = time.time()
    result = run_compare(cfg, algos=["ppo", "qlearning", "nsga2"],
                         seeds=[0, 1, 2, 3, 4], updates=100,
                         out_dir=None, render=False)
    wall_s = time.time() - t0
    return result, wall_s
