"""Cost models, critical paths, and the constraint checker."""

import math

import numpy as np
import pytest

from fogsched.domain import (AppDag, CostWeights, PlacementSet, RunningRange,
                             ServerSpec, ServerState, TaskSpec,
                             app_response_time_ms, check_constraints,
                             critical_path, critical_path_cost,
                             default_estimator, load_balance_cost,
                             mark_critical, processing_time_ms,
                             structural_estimator, task_ready_time_ms,
                             task_response_time_ms, topological_order,
                             transfer_time_ms, validate_fleet, weighted_cost)

from conftest import chain_dag, diamond_dag, make_net


# ---------------------------------------------------------------------------
# load balance
# ---------------------------------------------------------------------------

def test_load_balance_zero_when_even():
    w = CostWeights(a1=0.5, a2=0.5)
    assert load_balance_cost([0.3, 0.3], [0.5, 0.5], w) == 0.0


def test_load_balance_population_variance():
    w = CostWeights(a1=0.5, a2=0.5)
    # Var[0.2,0.4] = 0.01 for both channels
    got = load_balance_cost([0.2, 0.4], [0.2, 0.4], w)
    assert got == pytest.approx(0.01, abs=1e-15)


def test_load_balance_weight_masks_ram():
    w = CostWeights(a1=1.0, a2=0.0)
    got = load_balance_cost([0.2, 0.4], [0.9, 0.1], w)
    assert got == pytest.approx(0.01, abs=1e-15)


def test_load_balance_errors():
    w = CostWeights()
    with pytest.raises(ValueError, match="empty fleet"):
        load_balance_cost([], [], w)
    with pytest.raises(ValueError, match="out of range"):
        load_balance_cost([0.2, 1.4], [0.1, 0.1], w)
    with pytest.raises(ValueError, match="differ in length"):
        load_balance_cost([0.2], [0.1, 0.1], w)


def test_load_balance_permutation_invariant():
    rng = np.random.default_rng(7)
    w = CostWeights(a1=0.3, a2=0.7)
    for _ in range(50):
        n = rng.integers(2, 9)
        cpu = rng.uniform(0, 1, n)
        ram = rng.uniform(0, 1, n)
        perm = rng.permutation(n)
        a = load_balance_cost(cpu, ram, w)
        b = load_balance_cost(cpu[perm], ram[perm], w)
        assert a == pytest.approx(b, rel=1e-12)
        assert a >= 0.0


# ---------------------------------------------------------------------------
# time models
# ---------------------------------------------------------------------------

def test_processing_time():
    assert processing_time_ms(2000.0, 2000.0) == 1000.0
    assert processing_time_ms(1200.0, 2200.0) == pytest.approx(1200.0 / 2200.0 * 1000.0)
    with pytest.raises(ValueError, match="invalid size or frequency"):
        processing_time_ms(0.0, 2000.0)
    with pytest.raises(ValueError, match="invalid size or frequency"):
        processing_time_ms(100.0, -1.0)


def test_transfer_time():
    net = make_net(2, bw=25.0, prop=3.0)
    assert transfer_time_ms(0, 0, 25.0, net) == 0.0
    assert transfer_time_ms(0, 1, 25.0, net) == pytest.approx(1003.0)
    slow = make_net(2, bw=6.0, prop=15.0)
    assert transfer_time_ms(0, 1, 12.0, slow) == pytest.approx(2015.0)
    with pytest.raises(ValueError, match="unknown server"):
        transfer_time_ms(0, 5, 1.0, net)


def test_ready_time_is_max_over_parents():
    net = make_net(3, bw=25.0, prop=3.0)
    child = TaskSpec(id=2, app_id=0, size_mcycles=100.0, ram_demand_gb=0.1,
                     cpu_demand=0.1, predecessors=(0, 1),
                     packet_mb={0: 5.0, 1: 10.0})
    pl = PlacementSet()
    pl.assign(0, 0)
    pl.assign(1, 1)
    pl.assign(2, 2)
    want = max(transfer_time_ms(0, 2, 5.0, net), transfer_time_ms(1, 2, 10.0, net))
    assert task_ready_time_ms(child, pl, net) == pytest.approx(want)

    # co-located parents contribute nothing
    pl2 = PlacementSet()
    for t in (0, 1, 2):
        pl2.assign(t, 1)
    assert task_ready_time_ms(child, pl2, net) == 0.0

    root = TaskSpec(id=0, app_id=0, size_mcycles=100.0, ram_demand_gb=0.1,
                    cpu_demand=0.1)
    assert task_ready_time_ms(root, pl, net) == 0.0


def test_ready_time_unplaced_dependency():
    net = make_net(2)
    child = TaskSpec(id=1, app_id=0, size_mcycles=100.0, ram_demand_gb=0.1,
                     cpu_demand=0.1, predecessors=(0,), packet_mb={0: 1.0})
    pl = PlacementSet()
    pl.assign(1, 0)
    with pytest.raises(ValueError, match="dependency unplaced"):
        task_ready_time_ms(child, pl, net)


def test_response_time_root_and_child(small_fleet, small_net):
    root = TaskSpec(id=0, app_id=0, size_mcycles=2000.0, ram_demand_gb=0.1,
                    cpu_demand=0.1)
    pl = PlacementSet()
    pl.assign(0, 0)
    assert task_response_time_ms(root, pl, small_fleet, small_net) == 1000.0

    child = TaskSpec(id=1, app_id=0, size_mcycles=2000.0, ram_demand_gb=0.1,
                     cpu_demand=0.1, predecessors=(0,), packet_mb={0: 25.0})
    pl.assign(1, 0)  # co-located
    assert task_response_time_ms(child, pl, small_fleet, small_net) == 1000.0
    pl.assign(1, 2)  # across a 25 MB/s + 3 ms link, slower cpu
    want = 1003.0 + processing_time_ms(2000.0, 1500.0)
    assert task_response_time_ms(child, pl, small_fleet, small_net) == pytest.approx(want)


def test_response_time_never_below_processing():
    rng = np.random.default_rng(11)
    fleet = [ServerSpec(id=i, cpu_cores=2, cpu_freq_mhz=2000.0, ram_size_gb=8.0)
             for i in range(3)]
    net = make_net(3)
    for _ in range(100):
        t0 = TaskSpec(id=0, app_id=0, size_mcycles=float(rng.uniform(100, 2000)),
                      ram_demand_gb=0.1, cpu_demand=0.1)
        t1 = TaskSpec(id=1, app_id=0, size_mcycles=float(rng.uniform(100, 2000)),
                      ram_demand_gb=0.1, cpu_demand=0.1, predecessors=(0,),
                      packet_mb={0: float(rng.uniform(0, 20))})
        pl = PlacementSet()
        pl.assign(0, int(rng.integers(3)))
        pl.assign(1, int(rng.integers(3)))
        rt = task_response_time_ms(t1, pl, fleet, net)
        proc = processing_time_ms(t1.size_mcycles, 2000.0)
        assert rt >= proc - 1e-12
        if pl.server_of(0) == pl.server_of(1):
            assert rt == pytest.approx(proc)


# ---------------------------------------------------------------------------
# critical path
# ---------------------------------------------------------------------------

def test_topological_order_rejects_cycle():
    t = [
        TaskSpec(id=0, app_id=0, size_mcycles=1.0, ram_demand_gb=0, cpu_demand=0,
                 predecessors=(1,)),
        TaskSpec(id=1, app_id=0, size_mcycles=1.0, ram_demand_gb=0, cpu_demand=0,
                 predecessors=(0,)),
    ]
    with pytest.raises(ValueError, match="not a DAG"):
        topological_order(t)


def test_critical_path_chain_and_singleton():
    est = structural_estimator()
    dag = chain_dag([100.0, 200.0, 300.0])
    assert critical_path(dag, est) == {0, 1, 2}
    single = chain_dag([42.0])
    assert critical_path(single, est) == {0}


def test_critical_path_diamond_picks_heavy_branch():
    est = structural_estimator()
    dag = diamond_dag(size_b=2000.0, size_c=500.0)
    assert critical_path(dag, est) == {0, 1, 3}


def test_critical_path_tie_breaks_lexicographically():
    est = structural_estimator()
    dag = diamond_dag(size_b=700.0, size_c=700.0)  # equal-cost branches
    cost, path = critical_path_cost(dag, est)
    assert path == (0, 1, 3)
    assert cost == pytest.approx(1000.0 + 700.0 + 1000.0)


def test_is_critical_requires_marking():
    dag = chain_dag([1.0, 2.0])
    with pytest.raises(ValueError, match="critical flags unset"):
        dag.is_critical(0)
    mark_critical(dag, structural_estimator())
    assert dag.is_critical(0) and dag.is_critical(1)


def test_app_response_time_sums_critical_only(small_fleet, small_net):
    dag = diamond_dag(size_b=3000.0, size_c=100.0)
    mark_critical(dag, structural_estimator())
    pl = PlacementSet()
    for t in dag.tasks:
        pl.assign(t.id, 1)  # all co-located on the 3 GHz server
    got = app_response_time_ms(dag, pl, small_fleet, small_net)
    want = sum(processing_time_ms(t.size_mcycles, 3000.0)
               for t in dag.tasks if t.id in (0, 1, 3))
    assert got == pytest.approx(want)

    # shrinking the off-path task must not change the result
    dag2 = diamond_dag(size_b=3000.0, size_c=50.0)
    dag2.critical_flags = dict(dag.critical_flags)
    assert app_response_time_ms(dag2, pl, small_fleet, small_net) == pytest.approx(want)


def test_app_response_time_marks_lazily(small_fleet, small_net):
    dag = chain_dag([1000.0, 1000.0])
    pl = PlacementSet()
    pl.assign(0, 0)
    pl.assign(1, 0)
    got = app_response_time_ms(dag, pl, small_fleet, small_net)
    assert dag.critical_flags is not None
    assert got == pytest.approx(2 * processing_time_ms(1000.0, 2000.0))


def test_default_estimator_prices_edges(small_fleet, small_net):
    est = default_estimator(small_fleet, small_net)
    a = TaskSpec(id=0, app_id=0, size_mcycles=1000.0, ram_demand_gb=0.1,
                 cpu_demand=0.1)
    b = TaskSpec(id=1, app_id=0, size_mcycles=1000.0, ram_demand_gb=0.1,
                 cpu_demand=0.1, predecessors=(0,), packet_mb={0: 25.0})
    mean_freq = np.mean([s.cpu_freq_mhz for s in small_fleet])
    assert est.node_cost(a) == pytest.approx(1000.0 / mean_freq * 1000.0)
    # uniform 25 MB/s / 3 ms network: edge price equals a single hop
    assert est.edge_cost(a, b) == pytest.approx(1003.0)


# ---------------------------------------------------------------------------
# weighted cost and constraints
# ---------------------------------------------------------------------------

class _Norm:
    def __init__(self):
        self.lb_range = RunningRange()
        self.rt_range = RunningRange()


def test_weighted_cost_minmax():
    w = CostWeights(w1=0.5, w2=0.5)
    n = _Norm()
    n.lb_range.record(0.0)
    n.lb_range.record(0.2)
    n.rt_range.record(100.0)
    n.rt_range.record(300.0)
    assert weighted_cost(0.0, 100.0, w, n) == 0.0
    assert weighted_cost(0.2, 300.0, w, n) == 1.0
    assert weighted_cost(0.1, 200.0, w, n) == pytest.approx(0.5)


def test_weighted_cost_degenerate_range_contributes_zero():
    w = CostWeights(w1=0.5, w2=0.5)
    n = _Norm()
    n.lb_range.record(0.05)  # max == min
    n.rt_range.record(100.0)
    n.rt_range.record(200.0)
    assert weighted_cost(0.05, 200.0, w, n) == pytest.approx(0.5)
    # nothing recorded at all
    assert weighted_cost(1.0, 1.0, w, _Norm()) == 0.0


def test_weighted_cost_monotone_when_frozen():
    w = CostWeights(w1=0.4, w2=0.6)
    n = _Norm()
    n.lb_range.record(0.0)
    n.lb_range.record(1.0)
    n.rt_range.record(0.0)
    n.rt_range.record(1000.0)
    rng = np.random.default_rng(3)
    for _ in range(200):
        lb1, lb2 = sorted(rng.uniform(0, 1, 2))
        rt = float(rng.uniform(0, 1000))
        a = weighted_cost(lb1, rt, w, n)
        b = weighted_cost(lb2, rt, w, n)
        assert a <= b + 1e-12
        assert 0.0 <= a <= 1.0


def test_validate_fleet_flags_bad_capacity():
    fleet = [ServerSpec(id=0, cpu_cores=2, cpu_freq_mhz=2000.0, ram_size_gb=8.0),
             ServerSpec(id=1, cpu_cores=0, cpu_freq_mhz=-5.0, ram_size_gb=8.0)]
    out = validate_fleet(fleet)
    assert any(v.constraint == "C3" for v in out)
    assert validate_fleet(fleet[:1]) == []


def test_check_constraints_c4_and_c6(small_fleet, small_net):
    big = TaskSpec(id=0, app_id=0, size_mcycles=100.0, ram_demand_gb=2.0,
                   cpu_demand=0.1)
    app = AppDag(app_id=0, tasks=[big])
    pl = PlacementSet()
    pl.assign(0, 2)  # server 2 has 2 GB, demand 2 GB does not fit
    states = [ServerState(spec=s) for s in small_fleet]
    out = check_constraints(pl, small_fleet, states, [app])
    assert [v.constraint for v in out] == ["C4"]

    bad_w = CostWeights(w1=0.7, w2=0.7)
    out = check_constraints(pl, small_fleet, states, [],
                            weights=bad_w)
    assert [v.constraint for v in out] == ["C6"]


def test_check_constraints_c1_and_c2(small_fleet):
    t = TaskSpec(id=0, app_id=0, size_mcycles=100.0, ram_demand_gb=0.1,
                 cpu_demand=0.1)
    app = AppDag(app_id=0, tasks=[t])
    states = [ServerState(spec=s) for s in small_fleet]
    out = check_constraints(PlacementSet(), small_fleet, states, [app])
    assert [v.constraint for v in out] == ["C1"]

    pl = PlacementSet()
    pl.assign(0, 99)
    out = check_constraints(pl, small_fleet, states, [app])
    assert [v.constraint for v in out] == ["C1"]

    pl.assign(0, 0)
    states[1].cpu_utilization = 1.5
    out = check_constraints(pl, small_fleet, states, [app])
    assert [v.constraint for v in out] == ["C2"]


def test_check_constraints_clean_pass(small_fleet):
    t = TaskSpec(id=0, app_id=0, size_mcycles=100.0, ram_demand_gb=0.1,
                 cpu_demand=0.1)
    app = AppDag(app_id=0, tasks=[t])
    pl = PlacementSet()
    pl.assign(0, 1)
    states = [ServerState(spec=s) for s in small_fleet]
    assert check_constraints(pl, small_fleet, states, [app],
                             weights=CostWeights()) == []


def test_running_range():
    r = RunningRange()
    assert r.normalize(5.0) == 0.0  # empty range is cost-neutral
    r.record(2.0)
    assert r.normalize(2.0) == 0.0  # degenerate
    r.record(4.0)
    assert r.normalize(3.0) == pytest.approx(0.5)
    assert r.normalize(1.0) == 0.0  # clamped below
    assert r.normalize(9.0) == 1.0  # clamped above


def test_server_state_occupancy_roundtrip():
    spec = ServerSpec(id=0, cpu_cores=4, cpu_freq_mhz=2000.0, ram_size_gb=8.0)
    st = ServerState(spec=spec)
    st.add(1, 1.0, 2.0, release_time_ms=50.0)
    st.add(2, 2.0, 2.0, release_time_ms=80.0)
    assert st.cpu_utilization == pytest.approx(0.75)
    assert st.ram_utilization == pytest.approx(0.5)
    st.remove(1)
    assert st.cpu_utilization == pytest.approx(0.5)
    assert st.ram_utilization == pytest.approx(0.25)
    st.remove(2)
    assert st.cpu_utilization == 0.0 and st.ram_utilization == 0.0
