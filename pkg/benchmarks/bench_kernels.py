"""Compiled vs pure-Python kernels: power-iteration sweeps and simulator slots.

    python3 benchmarks/bench_kernels.py [--n-max 200] [--sweeps 50] [--slots 200000]

Both backends receive identical inputs; the script checks that their
outputs agree before reporting timings.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from bergeo_aoi import _pykernels, dtmc
from bergeo_aoi.model import derive_params, parse_inline

try:
    from bergeo_aoi import _core
except ImportError:  # extension not built
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_power(mod, pr, n_max, sweeps, repeat):
    chain = dtmc.build_chain(pr, n_max)

    def run():
        pi = np.full(chain.n_states, 1.0 / chain.n_states)
        mod.power_iterate(n_max, *chain.weights, pi, np.empty_like(pi),
                          np.zeros((4, n_max + 1)), 0.0, sweeps, sweeps)
        return pi

    secs, pi = best_of(run, repeat)
    return secs, pi, chain.n_states * sweeps


def bench_sim(mod, cfg, slots, repeat):
    q = np.array(cfg.q)
    gamma = np.array(cfg.gamma)
    u = np.random.default_rng(0).random((slots, cfg.n_sources + 2))

    def run():
        aoi = np.full(cfg.n_sources, 2, dtype=np.int64)
        server = np.array([-1, 0], dtype=np.int64)
        hist = np.zeros((cfg.n_sources, 1001), dtype=np.int64)
        over = np.zeros(cfg.n_sources, dtype=np.int64)
        total = np.zeros(cfg.n_sources, dtype=np.int64)
        mod.simulate_block(u, q, gamma, True, aoi, server, 1, 0, hist, over, total)
        return hist

    secs, hist = best_of(run, repeat)
    return secs, hist


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-max", type=int, default=200)
    ap.add_argument("--sweeps", type=int, default=50)
    ap.add_argument("--slots", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)
    if _core is None:
        raise SystemExit("compiled extension not available; build with pip install -e .")

    cfg = parse_inline([0.4, 0.4], [0.5, 0.9])
    pr = derive_params(cfg, 1)
    results = {}

    tc, pc, work = bench_power(_core, pr, args.n_max, args.sweeps, args.repeat)
    tp, pp, _ = bench_power(_pykernels, pr, args.n_max, args.sweeps, args.repeat)
    assert np.allclose(pc, pp, atol=1e-14), "power_iterate backends disagree"
    results["power_iterate"] = {
        "state_updates": work,
        "cython_s": tc,
        "python_s": tp,
        "cython_ns_per_state": 1e9 * tc / work,
        "python_ns_per_state": 1e9 * tp / work,
        "speedup": tp / tc,
    }

    tc, hc = bench_sim(_core, cfg, args.slots, args.repeat)
    tp, hp = bench_sim(_pykernels, cfg, args.slots, max(1, args.repeat // 3))
    assert np.array_equal(hc, hp), "simulate_block backends disagree"
    results["simulate_block"] = {
        "slots": args.slots,
        "cython_s": tc,
        "python_s": tp,
        "cython_ns_per_slot": 1e9 * tc / args.slots,
        "python_ns_per_slot": 1e9 * tp / args.slots,
        "speedup": tp / tc,
    }

    if args.json:
        print(json.dumps(results, indent=2))
        return
    print(f"{'kernel':<16}{'cython':>16}{'python':>16}{'speedup':>10}")
    for name, r in results.items():
        unit = "ns/state" if name == "power_iterate" else "ns/slot"
        c = r.get("cython_ns_per_state", r.get("cython_ns_per_slot"))
        p = r.get("python_ns_per_state", r.get("python_ns_per_slot"))
        print(f"{name:<16}{f'{c:.2f} {unit}':>16}{f'{p:.1f} {unit}':>16}{r['speedup']:>9.0f}x")


if __name__ == "__main__":
    main()
