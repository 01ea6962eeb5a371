import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajsim.channels import channel
from trajsim.circuit import Circuit, gate, measure
from trajsim.farm import (
    AutoscalerConfig,
    FarmConfig,
    FarmError,
    Job,
    PoolState,
    VirtualCluster,
    apply_scale,
    autoscale_tick,
    merge,
    negotiate,
    partition,
    run_farm,
    summary_bytes,
)
from trajsim.trajectory import TrajectoryConfig, run_trajectories

GIB = 1 << 30


def _noisy():
    return Circuit.from_ops(
        3,
        [
            gate("H", 0),
            channel("amplitude_damp", 0, gamma=0.2),
            gate("CNOT", 0, 1),
            channel("depolarize", 1, 2, p=0.05),
            gate("RY", 2, phi=0.4),
            channel("phase_damp", 2, gamma=0.1),
            measure(0, 1, 2, key="m"),
        ],
    )


CFG = TrajectoryConfig(r=60, base_seed=11, observables=("Z0", "Z1", "X2"), histogram=True)


def _pool(n_idle, limit=20, capacity=GIB):
    pool = PoolState(limit=limit)
    for _ in range(n_idle):
        pool.add_worker(capacity, 0.0)
    return pool


# ------------------------------------------------------------ partition


def test_partition_single_job():
    assert [(j.start, j.stop) for j in partition(10, 10)] == [(0, 10)]


def test_partition_remainder():
    assert [(j.start, j.stop) for j in partition(10, 3)] == [(0, 3), (3, 6), (6, 9), (9, 10)]


@given(st.integers(0, 5000), st.integers(1, 700))
def test_partition_tiles_range(r, chunk):
    jobs = partition(r, chunk)
    covered = [i for j in jobs for i in range(j.start, j.stop)]
    assert covered == list(range(r))
    assert all(0 < j.size <= chunk for j in jobs)


def test_partition_errors():
    with pytest.raises(ValueError):
        partition(10, 0)


# ------------------------------------------------------------ autoscaler


def test_autoscale_idle_noop_then_retire():
    pool = _pool(3)
    cfg = AutoscalerConfig(idle_timeout_s=5)
    assert autoscale_tick(pool, cfg, now=1.0).add == 0
    assert autoscale_tick(pool, cfg, now=1.0).retire == ()
    action = autoscale_tick(pool, cfg, now=5.0)
    assert sorted(action.retire) == [0, 1, 2]
    apply_scale(pool, action, GIB, 5.0)
    assert pool.workers == []


def test_autoscale_scale_up_batch():
    pool = _pool(0)
    pool.enqueue(partition(5, 1))
    assert autoscale_tick(pool, AutoscalerConfig(scale_up_batch=4)).add == 4


def test_autoscale_at_limit():
    pool = _pool(20)
    for w in pool.workers:
        w.status = "busy"
    pool.enqueue(partition(100, 1))
    action = autoscale_tick(pool, AutoscalerConfig())
    assert action.add == 0 and action.retire == ()


def test_autoscale_batch_capped_by_limit():
    pool = _pool(18)
    for w in pool.workers:
        w.status = "busy"
    pool.enqueue(partition(10, 1))
    assert autoscale_tick(pool, AutoscalerConfig(scale_up_batch=4)).add == 2


# ------------------------------------------------------------ matchmaker


def test_negotiate_homogeneous():
    pool = _pool(5)
    pool.enqueue(partition(3, 1))
    a = negotiate(pool)
    assert [(j.id, w.id) for j, w in a.pairs] == [(0, 0), (1, 1), (2, 2)]
    assert a.unmatchable == ()


def test_negotiate_unmatchable():
    pool = _pool(4, capacity=4 * GIB)
    pool.enqueue([Job(0, 0, 10, 8 * GIB)])
    a = negotiate(pool)
    assert a.pairs == ()
    assert a.unmatchable == (0,)
    assert len(pool.queue) == 1


def test_negotiate_heterogeneous():
    pool = PoolState()
    small = pool.add_worker(1 * GIB, 0)
    big = pool.add_worker(16 * GIB, 0)
    pool.enqueue([Job(0, 0, 10, 8 * GIB), Job(1, 10, 20, GIB // 2)])
    a = negotiate(pool)
    assert [(j.id, w.id) for j, w in a.pairs] == [(0, big.id), (1, small.id)]


# ------------------------------------------------------------ merge


def test_merge_single_partial():
    recs = run_trajectories(_noisy(), CFG).records
    assert merge([recs], CFG).records == recs


def test_merge_halves_bitwise():
    cfg = TrajectoryConfig(r=1000, base_seed=2, observables=("Z0",))
    c = Circuit.from_ops(1, [gate("H", 0), channel("phase_damp", 0, gamma=0.3), gate("H", 0)])
    whole = run_trajectories(c, cfg)
    halves = [run_trajectories(c, cfg, range(500, 1000)).records, run_trajectories(c, cfg, range(500)).records]
    assert summary_bytes(merge(halves, cfg)) == summary_bytes(whole)


def test_merge_overlap_and_gap():
    recs = run_trajectories(_noisy(), CFG).records
    with pytest.raises(FarmError, match="overlapping"):
        merge([recs[:40], recs[30:]], CFG)
    with pytest.raises(FarmError, match=r"missing trajectories: \[10,20\)"):
        merge([recs[:10], recs[20:]], CFG)


# ------------------------------------------------------------ live farm


def test_farm_matches_serial(tmp_path):
    res = run_farm(_noisy(), CFG, FarmConfig(limit=3, chunk=7, tick_ms=1), tmp_path)
    assert summary_bytes(res.summary) == summary_bytes(run_trajectories(_noisy(), CFG))
    assert (tmp_path / "summary.json").read_bytes() == summary_bytes(res.summary)
    assert len(list(tmp_path.glob("[0-9]*.json"))) == 9
    assert res.max_workers_seen <= 3


@pytest.mark.parametrize("limit", [1, 2, 8])
def test_farm_worker_count_invariance(limit):
    ref = summary_bytes(run_trajectories(_noisy(), CFG))
    res = run_farm(_noisy(), CFG, FarmConfig(limit=limit, chunk=5, tick_ms=1))
    assert summary_bytes(res.summary) == ref


def test_farm_fault_is_retried():
    ref = summary_bytes(run_trajectories(_noisy(), CFG))
    res = run_farm(_noisy(), CFG, FarmConfig(limit=4, chunk=10, tick_ms=1), faults=[(2, 0), (4, 0), (4, 1)])
    assert summary_bytes(res.summary) == ref
    assert res.attempts[2] == 2 and res.attempts[4] == 3


def test_farm_retries_exhausted():
    with pytest.raises(FarmError, match=r"lost ranges: \[30,60\)"):
        run_farm(_noisy(), CFG, FarmConfig(limit=2, chunk=30, tick_ms=1, retries=1), faults=[(1, 0), (1, 1)])


def test_farm_process_backend_with_fault():
    ref = summary_bytes(run_trajectories(_noisy(), CFG))
    farm = FarmConfig(limit=2, chunk=30, tick_ms=5, backend="process")
    res = run_farm(_noisy(), CFG, farm, faults=[(0, 0)])
    assert summary_bytes(res.summary) == ref


def test_farm_zero_trajectories(tmp_path):
    res = run_farm(_noisy(), CFG, FarmConfig(tick_ms=1), tmp_path, r=0)
    assert res.summary.records == []
    assert res.attempts == {}
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["trajectories"] == 0 and doc["estimates"] == {}


def test_farm_unmatchable_job():
    farm = FarmConfig(tick_ms=1, worker_capacity_bytes=16)
    with pytest.raises(FarmError, match="more than any worker offers"):
        run_farm(_noisy(), CFG, farm)


def test_farm_config_json():
    cfg = FarmConfig.from_json('{"limit": 3, "chunk": 50, "tick_ms": 10, "retries": 1}')
    assert (cfg.limit, cfg.chunk, cfg.retries) == (3, 50, 1)
    with pytest.raises(ValueError, match="unknown"):
        FarmConfig.from_json({"workers": 3})


# ------------------------------------------------------------ virtual time


def test_virtual_cluster_drains_within_limit():
    vc = VirtualCluster(limit=5, job_ticks=2)
    vc.submit(partition(1000, 37))
    for _ in range(200):
        vc.step()
        assert len(vc.pool.workers) <= 5
        assert vc.conserved() == 1000
    assert vc.drained
    assert sorted(vc.done) == list(range(28))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.lists(st.integers(1, 400), min_size=1, max_size=6), st.integers(1, 5))
def test_virtual_cluster_properties(limit, batches, job_ticks):
    vc = VirtualCluster(limit=limit, job_ticks=job_ticks)
    total, next_id = 0, 0
    for r in batches:
        jobs = partition(r, 10)
        for j in jobs:
            j.id += next_id
        next_id += len(jobs)
        total += r
        vc.submit(jobs)
        vc.run(3)
        assert vc.max_workers <= limit
        assert vc.conserved() == total
    vc.run(next_id * job_ticks + 100)
    assert vc.drained
