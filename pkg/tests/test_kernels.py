import json
import os
import subprocess
import sys

import numpy as np
import pytest

from bergeo_aoi import _pykernels, dtmc, kernels
from bergeo_aoi.model import derive_params, parse_inline

core = pytest.importorskip("bergeo_aoi._core")

CASES = [([0.4, 0.4], [0.5, 0.9]), ([0.5], [0.5]), ([0.2, 0.5, 0.7], [0.3, 1.0, 0.6])]


def run_power(mod, pr, n_max, sweeps):
    chain = dtmc.build_chain(pr, n_max)
    pi = np.full(chain.n_states, 1.0 / chain.n_states)
    it, res = mod.power_iterate(
        n_max, *chain.weights, pi, np.empty_like(pi), np.zeros((4, n_max + 1)), 0.0, sweeps, 1
    )
    return pi, it, res


@pytest.mark.parametrize("q,gamma", CASES)
def test_power_iterate_backends_agree(q, gamma):
    pr = derive_params(parse_inline(q, gamma), 1)
    for sweeps in (1, 5, 40):
        a, ia, ra = run_power(core, pr, 17, sweeps)
        b, ib, rb = run_power(_pykernels, pr, 17, sweeps)
        assert ia == ib == sweeps
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
        assert ra == pytest.approx(rb, rel=1e-9, abs=1e-17)


@pytest.mark.parametrize("q,gamma", CASES)
def test_one_sweep_equals_matrix_step(q, gamma):
    pr = derive_params(parse_inline(q, gamma), 1)
    chain = dtmc.build_chain(pr, 11)
    rng = np.random.default_rng(3)
    start = rng.random(chain.n_states)
    start /= start.sum()
    expected = chain.step(start)
    for mod in (core, _pykernels):
        pi = start.copy()
        mod.power_iterate(11, *chain.weights, pi, np.empty_like(pi), np.zeros((4, 12)), 0.0, 1, 1)
        np.testing.assert_allclose(pi, expected / expected.sum(), atol=1e-16)


def sim_block(mod, q, gamma, retransmit, slots, seed):
    q = np.asarray(q, float)
    gamma = np.asarray(gamma, float)
    n = q.size
    u = np.random.default_rng(seed).random((slots, n + 2))
    aoi = np.full(n, 2, dtype=np.int64)
    server = np.array([-1, 0], dtype=np.int64)
    hist = np.zeros((n, 16), dtype=np.int64)
    overflow = np.zeros(n, dtype=np.int64)
    aoi_sum = np.zeros(n, dtype=np.int64)
    half = slots // 2
    # two calls exercise state carried across blocks
    mod.simulate_block(u[:half], q, gamma, retransmit, aoi, server, 1, 10, hist, overflow, aoi_sum)
    mod.simulate_block(u[half:], q, gamma, retransmit, aoi, server, 1 + half, 10, hist, overflow, aoi_sum)
    return aoi, server, hist, overflow, aoi_sum


@pytest.mark.parametrize("q,gamma", CASES)
@pytest.mark.parametrize("retransmit", [True, False])
def test_simulate_block_backends_identical(q, gamma, retransmit):
    a = sim_block(core, q, gamma, retransmit, 20_000, 5)
    b = sim_block(_pykernels, q, gamma, retransmit, 20_000, 5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert a[3].sum() > 0  # small histogram cap forces the overflow path


def test_backend_selection():
    assert kernels.BACKEND == "cython"
    env = dict(os.environ, BERGEO_AOI_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import bergeo_aoi.kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


def test_buffer_checks():
    with pytest.raises(ValueError):
        core.power_iterate(5, *([0.1] * 7), np.zeros(14), np.zeros(3), np.zeros((4, 6)), 1e-9, 1, 1)
    with pytest.raises(ValueError):
        sim_block(core, [0.5] * 65, [0.5] * 65, True, 10, 0)


def test_benchmark_script_runs(capsys):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    bench.main(["--n-max", "20", "--sweeps", "3", "--slots", "2000", "--repeat", "1", "--json"])
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"power_iterate", "simulate_block"}
