import math

import numpy as np
import pytest

from bergeo_aoi import _pykernels, analytic, kernels, sim
from bergeo_aoi.model import derive_params, parse_inline

PAIR = parse_inline([0.4, 0.4], [0.5, 0.9])
REPEATED = parse_inline([0.5], [0.5])


def trace(mod, retransmit):
    """Three hand-written slots: generate, fail with no arrival, succeed."""
    u = np.array([[0.9, 0.1, 0.0], [0.9, 0.9, 0.0], [0.1, 0.9, 0.0]])
    aoi = np.array([2], dtype=np.int64)
    server = np.array([-1, 0], dtype=np.int64)
    hist = np.zeros((1, 10), dtype=np.int64)
    overflow = np.zeros(1, dtype=np.int64)
    total = np.zeros(1, dtype=np.int64)
    states = []
    for r in range(3):
        mod.simulate_block(u[r:r + 1], np.array([0.5]), np.array([0.5]), retransmit,
                           aoi, server, r + 1, 0, hist, overflow, total)
        states.append((int(aoi[0]), int(server[0]), int(server[1])))
    return states, hist[0].tolist(), int(total[0])


@pytest.mark.parametrize("mod", [kernels, _pykernels], ids=["default", "python"])
def test_hand_trace(mod):
    states, hist, total = trace(mod, True)
    assert states == [(3, 0, 1), (4, 0, 2), (3, -1, 0)]
    assert hist[2:5] == [1, 1, 1] and total == 9
    states, _, _ = trace(mod, False)
    assert states == [(3, 0, 1), (4, -1, 0), (5, -1, 0)]


def test_always_fresh():
    st = sim.run_replication(parse_inline([1.0], [1.0]), horizon=5000, warmup=10, seed=1)
    hist = st.histogram[0]
    assert hist[2] == st.recorded_slots and hist.sum() == hist[2]


def test_first_slots_after_start():
    # start idle at AoI 2: slot 2 still shows 3 before the first delivery
    st = sim.run_replication(parse_inline([1.0], [1.0]), horizon=100, warmup=1, seed=1)
    assert st.histogram[0][3] == 1 and st.histogram[0][2] == 98


def test_deterministic():
    a = sim.run_replications(PAIR, horizon=20_000, warmup=100, base_seed=9, reps=4)
    b = sim.run_replications(PAIR, horizon=20_000, warmup=100, base_seed=9, reps=4)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.aoi_sum, b.aoi_sum)
    assert a.seeds == b.seeds == tuple((9, (r,)) for r in range(4))
    c = sim.run_replications(PAIR, horizon=20_000, warmup=100, base_seed=10, reps=4)
    assert not np.array_equal(a.aoi_sum, c.aoi_sum)


def test_threads_do_not_change_results():
    a = sim.run_replications(PAIR, horizon=20_000, warmup=100, base_seed=3, reps=5, jobs=1)
    b = sim.run_replications(PAIR, horizon=20_000, warmup=100, base_seed=3, reps=5, jobs=3)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.aoi_sum, b.aoi_sum)


def test_single_replication_identity():
    seed = sim.replication_seeds(4, 1)[0]
    one = sim.run_replication(PAIR, horizon=10_000, warmup=50, seed=seed)
    many = sim.run_replications(PAIR, horizon=10_000, warmup=50, base_seed=4, reps=1)
    np.testing.assert_array_equal(one.counts, many.counts)
    np.testing.assert_array_equal(one.mean, many.mean)
    assert np.isnan(many.stderr).all()


def test_checked_mode_matches_fast_path():
    fast = sim.run_replication(PAIR, "retransmission", 30_000, 100, seed=5)
    checked = sim.run_replication(PAIR, "retransmission", 30_000, 100, seed=5, check=True)
    np.testing.assert_array_equal(fast.counts, checked.counts)
    checked = sim.run_replication(PAIR, "discard", 30_000, 100, seed=5, check=True)
    assert checked.recorded_slots == 29_900


def test_checked_mode_catches_broken_state():
    # AoI below the age of the in-service update is impossible
    u = np.full((1, 3), 0.9)
    with pytest.raises(_pykernels.ModelInvariantError):
        _pykernels.simulate_block(
            u, np.array([0.5]), np.array([0.5]), True, np.array([3], dtype=np.int64),
            np.array([0, 5], dtype=np.int64), 10, 0, np.zeros((1, 20), dtype=np.int64),
            np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64), stamps=[5],
        )


def test_argument_errors():
    with pytest.raises(ValueError, match="policy"):
        sim.run_replication(PAIR, "drop", 100, 10)
    with pytest.raises(ValueError, match="exceed"):
        sim.run_replication(PAIR, horizon=10, warmup=10)
    with pytest.raises(ValueError):
        sim.run_replications(PAIR, reps=0)
    with pytest.raises(IndexError):
        sim.empirical_pmf(sim.run_replication(PAIR, horizon=100, warmup=10), 3)


def test_empirical_pmf_normalized():
    st = sim.run_replications(PAIR, horizon=50_000, warmup=100, base_seed=2, reps=3, hist_cap=15)
    for i in (1, 2):
        emp = sim.empirical_pmf(st, i)
        assert emp.n[0] == 2
        assert emp.probability.sum() + emp.overflow == pytest.approx(1.0, abs=1e-12)
        assert emp.overflow > 0
    assert st.counts[:, :, :2].sum() == 0


def test_stderr_scales_with_reps():
    a = sim.run_replications(PAIR, horizon=20_000, warmup=500, base_seed=12, reps=30)
    b = sim.run_replications(PAIR, horizon=20_000, warmup=500, base_seed=13, reps=60)
    ratio = a.stderr / b.stderr
    assert np.all((ratio > 1.1) & (ratio < 1.8)), ratio


def test_repeated_root_pmf_head():
    st = sim.run_replications(REPEATED, horizon=200_000, base_seed=21, reps=20)
    emp = sim.empirical_pmf(st, 1)
    for n, expected in ((2, 0.25), (3, 0.25), (4, 0.1875)):
        assert abs(emp.probability[n - 2] - expected) < 3 * emp.stderr[n - 2]
    z = sim.zscore(st.mean[0], 4.0, st.stderr[0])
    assert abs(z) < 3


def test_engine_triangle_mean():
    st = sim.run_replications(PAIR, horizon=200_000, base_seed=22, reps=20)
    for i in (1, 2):
        exact = analytic.aoi_mean(derive_params(PAIR, i))
        assert abs(sim.zscore(st.mean[i - 1], exact, st.stderr[i - 1])) < 3


def test_retransmission_beats_discard_on_grid():
    levels = (0.1, 0.3, 0.5)
    gap = np.zeros((3, 3))
    for a, q in enumerate(levels):
        for b, g in enumerate(levels):
            cfg = parse_inline([q, q], [g, g])
            r = sim.run_replications(cfg, "retransmission", 200_000, base_seed=31, reps=10)
            d = sim.run_replications(cfg, "discard", 200_000, base_seed=32, reps=10)
            gap[a, b] = d.mean[0] - r.mean[0]
            se = math.hypot(d.stderr[0], r.stderr[0])
            assert gap[a, b] > 3 * se, (q, g, gap[a, b], se)
    # the advantage grows as either probability falls
    assert np.all(np.diff(gap, axis=0) < 0) and np.all(np.diff(gap, axis=1) < 0), gap


def test_pmf_zscores_threshold():
    st = sim.run_replications(PAIR, horizon=10_000, warmup=100, base_seed=1, reps=5)
    expected = analytic.aoi_distribution(derive_params(PAIR, 1)).values
    zs = sim.pmf_zscores(st, 1, expected, min_count=50)
    total = st.reps * st.recorded_slots
    assert [n for n, _ in zs] == [k + 2 for k in np.nonzero(expected * total >= 50)[0]]
