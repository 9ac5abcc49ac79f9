"""Slot-level Monte Carlo of the multi-source bufferless preemptive link.

Per slot ``t`` (AoI values are recorded at the start of the slot):

1. if a source-j update is in service, it is delivered with prob. ``gamma_j``;
2. every source generates an update with prob. ``q_i``, independently;
3. if anything was generated, one generator is picked uniformly and its
   fresh update occupies the server in slot ``t + 1``; otherwise a failed
   update is kept (``retransmission``) or dropped (``discard``) and a
   delivered one leaves the server idle;
4. AoI of a source whose update of age ``m`` was delivered becomes ``m + 1``,
   every other AoI grows by one, and a retained update ages by one.

Random numbers come from numpy's PCG64.  Replication ``r`` of a run with
``base_seed`` uses ``SeedSequence(base_seed).spawn(reps)[r]``, i.e.
``SeedSequence(base_seed, spawn_key=(r,))``.  Each slot consumes one row of
``N + 2`` uniforms (success, one per source, selection) drawn in blocks,
so results do not depend on the kernel backend or on thread scheduling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _pykernels, kernels
from .model import SystemConfig

POLICIES = ("retransmission", "discard")
DEFAULT_HORIZON = 10**6
DEFAULT_WARMUP = 10**3
DEFAULT_REPS = 30
DEFAULT_HIST_CAP = 10**5
BLOCK = 1 << 16
THREADS_ENV = "BERGEO_AOI_THREADS"


@dataclass(frozen=True)
class SimStats:
    """Per-replication AoI histograms and the between-replication summary.

    ``counts[r, i, n]`` is the number of recorded slots of replication
    ``r`` in which source ``i + 1`` had AoI ``n`` (``n <= hist_cap``);
    larger values are tallied in ``overflow[r, i]``.
    """

    config: SystemConfig
    policy: str
    horizon: int
    warmup: int
    seeds: tuple[tuple[int, tuple[int, ...]], ...]
    hist_cap: int
    counts: np.ndarray = field(repr=False)
    overflow: np.ndarray = field(repr=False)
    aoi_sum: np.ndarray = field(repr=False)

    @property
    def reps(self) -> int:
        return self.counts.shape[0]

    @property
    def recorded_slots(self) -> int:
        return self.horizon - self.warmup

    @property
    def rep_means(self) -> np.ndarray:
        return self.aoi_sum / self.recorded_slots

    @property
    def mean(self) -> np.ndarray:
        return self.rep_means.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        if self.reps < 2:
            return np.full(self.config.n_sources, np.nan)
        return self.rep_means.std(axis=0, ddof=1) / math.sqrt(self.reps)

    @property
    def histogram(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "horizon": self.horizon,
            "warmup": self.warmup,
            "reps": self.reps,
            "seeds": [{"entropy": e, "spawn_key": list(k)} for e, k in self.seeds],
            "mean": self.mean.tolist(),
            "stderr": self.stderr.tolist(),
        }


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def _check_args(policy: str, horizon: int, warmup: int) -> None:
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES} (got {policy!r})")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    if horizon <= warmup:
        raise ValueError(f"horizon ({horizon}) must exceed warmup ({warmup})")


def run_replication(
    config: SystemConfig,
    policy: str = "retransmission",
    horizon: int = DEFAULT_HORIZON,
    warmup: int = DEFAULT_WARMUP,
    seed=0,
    hist_cap: int = DEFAULT_HIST_CAP,
    check: bool = False,
) -> SimStats:
    """Simulate one replication; ``seed`` is an int or a ``SeedSequence``.

    Starts with an idle server and every AoI equal to 2.  ``check=True``
    runs the pure-Python loop with per-slot invariant assertions.
    """
    _check_args(policy, horizon, warmup)
    ss = _seed_sequence(seed)
    rng = np.random.Generator(np.random.PCG64(ss))
    n_src = config.n_sources
    q = np.array(config.q)
    gamma = np.array(config.gamma)
    aoi = np.full(n_src, 2, dtype=np.int64)
    server = np.array([-1, 0], dtype=np.int64)
    hist = np.zeros((n_src, hist_cap + 1), dtype=np.int64)
    overflow = np.zeros(n_src, dtype=np.int64)
    aoi_sum = np.zeros(n_src, dtype=np.int64)
    retransmit = policy == "retransmission"
    stamps = [0] if check else None

    t = 1
    while t <= horizon:
        rows = min(BLOCK, horizon - t + 1)
        u = rng.random((rows, n_src + 2))
        if check:
            _pykernels.simulate_block(
                u, q, gamma, retransmit, aoi, server, t, warmup, hist, overflow,
                aoi_sum, stamps=stamps,
            )
        else:
            kernels.simulate_block(
                u, q, gamma, retransmit, aoi, server, t, warmup, hist, overflow, aoi_sum
            )
        t += rows

    top = int(np.max(np.nonzero(hist.any(axis=0))[0], initial=1))
    return SimStats(
        config=config,
        policy=policy,
        horizon=horizon,
        warmup=warmup,
        seeds=((int(ss.entropy), tuple(ss.spawn_key)),),
        hist_cap=hist_cap,
        counts=hist[None, :, : top + 1].copy(),
        overflow=overflow[None, :],
        aoi_sum=aoi_sum[None, :],
    )


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def combine(parts: list[SimStats]) -> SimStats:
    """Stack replications in the given order."""
    first = parts[0]
    width = max(p.counts.shape[2] for p in parts)
    counts = np.zeros((sum(p.reps for p in parts), first.config.n_sources, width), dtype=np.int64)
    row = 0
    for p in parts:
        counts[row:row + p.reps, :, : p.counts.shape[2]] = p.counts
        row += p.reps
    return SimStats(
        config=first.config,
        policy=first.policy,
        horizon=first.horizon,
        warmup=first.warmup,
        seeds=tuple(s for p in parts for s in p.seeds),
        hist_cap=first.hist_cap,
        counts=counts,
        overflow=np.concatenate([p.overflow for p in parts]),
        aoi_sum=np.concatenate([p.aoi_sum for p in parts]),
    )


def replication_seeds(base_seed: int, reps: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(base_seed)).spawn(reps)


def run_replications(
    config: SystemConfig,
    policy: str = "retransmission",
    horizon: int = DEFAULT_HORIZON,
    warmup: int = DEFAULT_WARMUP,
    base_seed: int = 0,
    reps: int = DEFAULT_REPS,
    hist_cap: int = DEFAULT_HIST_CAP,
    jobs: int | None = None,
) -> SimStats:
    if reps < 1:
        raise ValueError("reps must be >= 1")
    _check_args(policy, horizon, warmup)
    seeds = replication_seeds(base_seed, reps)

    def one(ss):
        return run_replication(config, policy, horizon, warmup, ss, hist_cap)

    jobs = default_jobs() if jobs is None else max(1, jobs)
    if jobs == 1:
        parts = [one(ss) for ss in seeds]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(one, seeds))
    return combine(parts)


@dataclass(frozen=True)
class EmpiricalPmf:
    n: np.ndarray
    probability: np.ndarray
    stderr: np.ndarray
    overflow: float


def empirical_pmf(stats: SimStats, i: int) -> EmpiricalPmf:
    """Pooled normalized histogram of source ``i`` over ``n = 2..max observed``.

    ``stderr`` is the between-replication standard error of the per-n
    frequency (NaN for a single replication).
    """
    if not 1 <= i <= stats.config.n_sources:
        raise IndexError(f"source index {i} out of range 1..{stats.config.n_sources}")
    counts = stats.counts[:, i - 1, :]
    nz = np.nonzero(counts.any(axis=0))[0]
    top = int(nz.max()) if nz.size else 2
    per_rep = counts[:, 2 : top + 1] / stats.recorded_slots
    total = stats.reps * stats.recorded_slots
    prob = counts[:, 2 : top + 1].sum(axis=0) / total
    if stats.reps > 1:
        se = per_rep.std(axis=0, ddof=1) / math.sqrt(stats.reps)
    else:
        se = np.full(prob.shape, np.nan)
    return EmpiricalPmf(
        n=np.arange(2, top + 1),
        probability=prob,
        stderr=se,
        overflow=float(stats.overflow[:, i - 1].sum() / total),
    )


def zscore(observed: float, expected: float, stderr: float) -> float:
    if stderr > 0:
        return (observed - expected) / stderr
    return 0.0 if observed == expected else math.inf


def pmf_zscores(stats: SimStats, i: int, expected: np.ndarray, min_count: float = 50.0):
    """``(n, z)`` for every ``n`` whose expected count is ``>= min_count``.

    ``expected[k]`` is the model probability of AoI ``k + 2``.
    """
    emp = empirical_pmf(stats, i)
    total = stats.reps * stats.recorded_slots
    expected = np.asarray(expected, dtype=float)
    out = []
    for k in np.nonzero(expected * total >= min_count)[0]:
        obs = emp.probability[k] if k < emp.probability.size else 0.0
        se = emp.stderr[k] if k < emp.stderr.size else 0.0
        out.append((int(k) + 2, zscore(float(obs), float(expected[k]), float(se))))
    return out
