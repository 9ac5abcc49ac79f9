"""Truncated 2D age chain built from the one-step transition rules.

This is the numerical oracle for the closed forms in :mod:`.analytic`: it
never uses the roots or the product form, only the per-slot transition
probabilities of ``(AoI, age of the in-service update)``.

Truncation clamps the first coordinate at ``n_max`` (and the second at
``n_max - 1`` when it would become invalid).  The clamp commutes with the
dynamics, so the clamped chain is an exact lumping of the infinite one:
interior states carry their true stationary mass and row ``n_max`` carries
``Pr{AoI >= n_max}``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from . import analytic, kernels
from .model import DerivedParams

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITERS = 10**6
DEFAULT_TAIL = 1e-10
CHECK_EVERY = 8


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"power iteration did not reach tolerance after {iterations} sweeps "
            f"(residual {residual:.3e}); enlarge max_iters"
        )
        self.iterations = iterations
        self.residual = residual


def state_count(n_max: int) -> int:
    return n_max * (n_max + 1) // 2 - 1


def state_index(n: int, m: int) -> int:
    """Flat index of ``(n, m)``; rows ``n = 2, 3, ...`` hold ``n`` states each."""
    return n * (n - 1) // 2 - 1 + m


class EdgeWeights(NamedTuple):
    """One-step probabilities of the 2D age chain for one source.

    From ``(n, 0)``: ``gen`` (source-i update selected) and ``stay``.  From
    ``(n, m >= 1)``: ``deliver_new``, ``deliver_idle``, ``fail_new``,
    ``fail_other`` (preempted by another source) and ``retransmit``.
    """

    gen: float
    stay: float
    deliver_new: float
    deliver_idle: float
    fail_new: float
    fail_other: float
    retransmit: float


def edge_weights(params: DerivedParams) -> EdgeWeights:
    p_i, p, g = params.p_i, params.p, params.gamma
    return EdgeWeights(
        gen=p_i,
        stay=1.0 - p_i,
        deliver_new=g * p_i,
        deliver_idle=g * (1.0 - p_i),
        fail_new=(1.0 - g) * p_i,
        fail_other=(1.0 - g) * (p - p_i),
        retransmit=(1.0 - g) * (1.0 - p),
    )


def _clamp(n_max: int, tn, tm):
    over = tn > n_max
    tn = np.minimum(tn, n_max)
    tm = np.where(tm >= tn, tn - 1, tm)
    return tn, tm, over


@dataclass(frozen=True)
class TruncatedChain:
    """Clamped chain on ``{(n, m): 2 <= n <= n_max, 0 <= m < n}``.

    Edges are generated from the rule in :meth:`outgoing`; the explicit
    sparse matrix is built on first access of :attr:`transitions` and is
    meant for inspection on small ``n_max``.  The solver applies the same
    rule matrix-free.
    """

    params: DerivedParams
    n_max: int
    weights: EdgeWeights

    @property
    def n_states(self) -> int:
        return state_count(self.n_max)

    def index(self, n: int, m: int) -> int:
        if not (2 <= n <= self.n_max and 0 <= m < n):
            raise KeyError((n, m))
        return state_index(n, m)

    def states(self):
        for n in range(2, self.n_max + 1):
            for m in range(n):
                yield n, m

    def state_of(self, idx: int) -> tuple[int, int]:
        n = (1 + math.isqrt(8 * (idx + 1) + 1)) // 2
        while state_index(n, 0) > idx:
            n -= 1
        while state_index(n + 1, 0) <= idx:
            n += 1
        return n, idx - state_index(n, 0)

    def _raw_edges(self, n: int, m: int):
        w = self.weights
        if m == 0:
            return [((n + 1, 1), w.gen), ((n + 1, 0), w.stay)]
        return [
            ((m + 1, 1), w.deliver_new),
            ((m + 1, 0), w.deliver_idle),
            ((n + 1, 1), w.fail_new),
            ((n + 1, 0), w.fail_other),
            ((n + 1, m + 1), w.retransmit),
        ]

    def outgoing(self, n: int, m: int) -> list[tuple[tuple[int, int], float]]:
        """Positive-probability edges out of ``(n, m)`` after clamping, merged."""
        self.index(n, m)
        merged: dict[tuple[int, int], float] = {}
        for (tn, tm), w in self._raw_edges(n, m):
            if w <= 0.0:
                continue
            if tn > self.n_max:
                tn = self.n_max
            if tm >= tn:
                tm = tn - 1
            merged[(tn, tm)] = merged.get((tn, tm), 0.0) + w
        return list(merged.items())

    def is_clamped(self, n: int, m: int) -> bool:
        """True when some edge out of ``(n, m)`` had its age clamped."""
        self.index(n, m)
        return n == self.n_max

    @property
    def clamped_states(self) -> range:
        return range(state_index(self.n_max, 0), self.n_states)

    @cached_property
    def transitions(self) -> sp.csr_matrix:
        """Explicit ``P`` (rows = current state), duplicates merged."""
        n_max, w = self.n_max, self.weights
        rows, cols, vals = [], [], []

        def emit(src, tn, tm, weight):
            if weight <= 0.0:
                return
            tn = np.broadcast_to(tn, src.shape)
            tm = np.broadcast_to(tm, src.shape)
            tn, tm, _ = _clamp(n_max, tn, tm)
            rows.append(src)
            cols.append(tn * (tn - 1) // 2 - 1 + tm)
            vals.append(np.full(src.shape, weight))

        for n in range(2, n_max + 1):
            base = state_index(n, 0)
            s0 = np.array([base])
            emit(s0, n + 1, 1, w.gen)
            emit(s0, n + 1, 0, w.stay)
            m = np.arange(1, n)
            src = base + m
            emit(src, m + 1, 1, w.deliver_new)
            emit(src, m + 1, 0, w.deliver_idle)
            emit(src, n + 1, 1, w.fail_new)
            emit(src, n + 1, 0, w.fail_other)
            emit(src, n + 1, m + 1, w.retransmit)

        size = self.n_states
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size),
        ).tocsr()
        mat.sum_duplicates()
        return mat

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.transitions.sum(axis=1)).ravel()

    def step(self, pi: np.ndarray) -> np.ndarray:
        """One application ``pi @ P`` with the explicit matrix."""
        return self.transitions.T @ pi


def build_chain(params: DerivedParams, n_max: int) -> TruncatedChain:
    if n_max < 3:
        raise ValueError(f"n_max must be >= 3 (got {n_max})")
    return TruncatedChain(params=params, n_max=int(n_max), weights=edge_weights(params))


def default_n_max(params: DerivedParams, tail: float = DEFAULT_TAIL) -> int:
    return max(3, analytic.tail_cutoff(params, tail))


@dataclass(frozen=True)
class StationaryGrid:
    n_max: int
    probabilities: np.ndarray = field(repr=False)
    residual: float
    iterations: int

    def __getitem__(self, nm: tuple[int, int]) -> float:
        n, m = nm
        if not (2 <= n <= self.n_max and 0 <= m < n):
            raise KeyError(nm)
        return float(self.probabilities[state_index(n, m)])

    def as_matrix(self) -> np.ndarray:
        """``(n_max + 1, n_max)`` array indexed ``[n, m]``, zero off the state space."""
        out = np.zeros((self.n_max + 1, self.n_max))
        for n in range(2, self.n_max + 1):
            base = state_index(n, 0)
            out[n, :n] = self.probabilities[base:base + n]
        return out

    def marginal(self) -> np.ndarray:
        """AoI marginal for ``n = 2..n_max``; the last entry is ``Pr{AoI >= n_max}``."""
        return np.array([
            self.probabilities[state_index(n, 0):state_index(n, 0) + n].sum()
            for n in range(2, self.n_max + 1)
        ])

    @property
    def boundary_mass(self) -> float:
        return float(self.marginal()[-1])

    @property
    def tail_estimate(self) -> float:
        """The chain's own estimate of ``Pr{AoI >= n_max}`` (the clamped row)."""
        return self.boundary_mass

    def mean(self) -> float:
        """Mean of the marginal; the boundary row contributes at ``n_max``."""
        marg = self.marginal()
        return float(np.dot(np.arange(2, self.n_max + 1), marg))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "m", "probability"])
            for n in range(2, self.n_max + 1):
                base = state_index(n, 0)
                for m in range(n):
                    w.writerow([n, m, f"{self.probabilities[base + m]:.17g}"])


def solve_stationary(
    chain: TruncatedChain, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS
) -> StationaryGrid:
    """Power iteration from the uniform distribution.

    Raises :class:`ConvergenceError` when ``max_iters`` sweeps are not
    enough to bring ``max|pi P - pi|`` down to ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = chain.n_states
    pi = np.full(n, 1.0 / n)
    work = np.empty(n)
    scratch = np.zeros((4, chain.n_max + 1))
    iters, res = kernels.power_iterate(
        chain.n_max, *chain.weights, pi, work, scratch, float(tol), int(max_iters), CHECK_EVERY
    )
    if res > tol:
        raise ConvergenceError(iters, res)
    pi /= pi.sum()
    return StationaryGrid(n_max=chain.n_max, probabilities=pi, residual=res, iterations=iters)


def solve(params: DerivedParams, n_max: int | None = None, **kwargs) -> StationaryGrid:
    if n_max is None:
        n_max = default_n_max(params)
    return solve_stationary(build_chain(params, n_max), **kwargs)


@dataclass(frozen=True)
class DiscrepancyReport:
    max_abs: float
    mean_abs: float
    marginal_max_abs: float
    boundary_mass: float
    analytic_tail: float
    boundary_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return max(self.max_abs, self.marginal_max_abs, self.boundary_error) <= self.tolerance


def compare_to_analytic(
    grid: StationaryGrid, params: DerivedParams, tolerance: float = 1e-8
) -> DiscrepancyReport:
    """State-by-state deviation from the closed form.

    Interior rows ``n < n_max`` are compared directly.  Row ``n_max``
    aggregates every age ``>= n_max``, so its total is compared with the
    closed-form tail instead.
    """
    n_max = grid.n_max
    exact = analytic.stationary_grid(params, n_max - 1)
    got = grid.as_matrix()
    diffs = []
    for n in range(2, n_max):
        diffs.append(np.abs(got[n, :n] - exact[n, :n]))
    diffs = np.concatenate(diffs)

    dist = analytic.aoi_distribution(params, n_max=n_max)
    marg = grid.marginal()
    marg_dev = float(np.max(np.abs(marg[:-1] - dist.values[:-1]))) if n_max > 2 else 0.0
    tail = analytic.aoi_tail(params, n_max)
    return DiscrepancyReport(
        max_abs=float(diffs.max()),
        mean_abs=float(diffs.mean()),
        marginal_max_abs=marg_dev,
        boundary_mass=float(marg[-1]),
        analytic_tail=tail,
        boundary_error=abs(float(marg[-1]) - tail),
        tolerance=tolerance,
    )


def reachable_from(chain: TruncatedChain, start: tuple[int, int] = (2, 0)) -> np.ndarray:
    """Boolean mask of states reachable from ``start`` along positive edges."""
    p = chain.transitions
    seen = np.zeros(chain.n_states, dtype=bool)
    stack = [chain.index(*start)]
    seen[stack[0]] = True
    while stack:
        s = stack.pop()
        for t in p.indices[p.indptr[s]:p.indptr[s + 1]]:
            if not seen[t]:
                seen[t] = True
                stack.append(int(t))
    return seen
