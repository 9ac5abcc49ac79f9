"""Closed-form stationary law of the 2D age process and the per-source AoI.

All expressions are written in terms of the difference quotient

    D_k = (beta**k - alpha**k) / (beta - alpha),   D_0 = 0, D_1 = 1,

which has the limit ``k * alpha**(k-1)`` when the roots coincide and obeys
``D_{k+1} = beta * D_k + alpha**k``.  With it:

* ``pi(n, 0) = p_i * (D_n + (gamma - 1) * D_{n-1} - lam**(n-1))``
* ``pi(n, m) = gamma * p_i**2 * lam**(m-1) * D_{n-m}`` for ``m >= 1``
* ``pmf(n) = gamma * p_i * D_{n-1}``
* ``Pr{AoI >= n} = D_{n-1} - lam * D_{n-2}``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import DerivedParams

NEAR_DEGENERATE_GAP = 1e-6
DEFAULT_TAIL = 1e-12
MAX_N = 10**6


def diff_quotient(params: DerivedParams, k: int) -> float:
    """``D_k`` for integer ``k >= 0``."""
    if k < 0:
        raise ValueError(f"k must be >= 0 (got {k})")
    if k == 0:
        return 0.0
    a, b = params.alpha, params.beta
    if params.repeated_root:
        return k * a ** (k - 1)
    gap = b - a
    if gap < NEAR_DEGENERATE_GAP:
        # sum_{j<k} a**j * b**(k-1-j), accumulated without subtraction
        d = 0.0
        apow = 1.0
        for _ in range(k):
            d = b * d + apow
            apow *= a
        return d
    return (b**k - a**k) / gap


def diff_quotient_vector(params: DerivedParams, k_max: int) -> np.ndarray:
    """``D_0 .. D_{k_max}`` filled by the positive recurrence."""
    out = np.empty(k_max + 1)
    out[0] = 0.0
    a, b = params.alpha, params.beta
    d = 0.0
    apow = 1.0
    for k in range(1, k_max + 1):
        d = b * d + apow
        apow *= a
        out[k] = d
    return out


def _require_n(n: int) -> None:
    if n < 2:
        raise ValueError(f"AoI support starts at n=2 (got n={n})")


def stationary_n0(params: DerivedParams, n: int) -> float:
    """Stationary probability of state ``(n, 0)``: no source-i update in service."""
    _require_n(n)
    g = params.gamma
    return params.p_i * (
        diff_quotient(params, n)
        + (g - 1.0) * diff_quotient(params, n - 1)
        - params.lam ** (n - 1)
    )


def stationary_nm(params: DerivedParams, n: int, m: int) -> float:
    """Stationary probability of state ``(n, m)`` with ``1 <= m < n``."""
    if not 1 <= m < n:
        raise ValueError(f"need 1 <= m < n (got n={n}, m={m})")
    return (
        params.gamma
        * params.p_i**2
        * params.lam ** (m - 1)
        * diff_quotient(params, n - m)
    )


def aoi_pmf(params: DerivedParams, n: int) -> float:
    _require_n(n)
    return params.gamma * params.p_i * diff_quotient(params, n - 1)


def aoi_mean(params: DerivedParams) -> float:
    g, p, p_i = params.gamma, params.p, params.p_i
    return (g + (1.0 - g) * p) / (g * p_i) + 1.0


def aoi_tail(params: DerivedParams, n: int) -> float:
    """``Pr{AoI >= n}``."""
    _require_n(n)
    t = diff_quotient(params, n - 1) - params.lam * diff_quotient(params, n - 2)
    return max(t, 0.0)


def tail_cutoff(params: DerivedParams, tail: float = DEFAULT_TAIL, cap: int = MAX_N) -> int:
    """Smallest ``n >= 2`` with ``aoi_tail(n) < tail``, capped at ``cap``."""
    if aoi_tail(params, 2) < tail:
        return 2
    lo, hi = 2, 3
    while aoi_tail(params, hi) >= tail:
        lo = hi
        if hi >= cap:
            return cap
        hi = min(2 * hi, cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if aoi_tail(params, mid) < tail:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class AoiDistribution:
    """Per-source AoI law with a truncated vector view.

    ``values[k]`` is the probability of AoI ``n = k + 2``; ``tail_mass`` is
    the exact mass beyond ``n_max`` (not folded back into ``values``).
    """

    source_index: int
    params: DerivedParams
    n_max: int
    values: np.ndarray = field(repr=False)
    tail_mass: float
    mean: float

    @property
    def support(self) -> np.ndarray:
        return np.arange(2, self.n_max + 1)

    def pmf(self, n: int) -> float:
        if n < 2:
            return 0.0
        return aoi_pmf(self.params, n)


def aoi_distribution(
    params: DerivedParams, n_max: int | None = None, tail: float = DEFAULT_TAIL
) -> AoiDistribution:
    if n_max is None:
        n_max = tail_cutoff(params, tail)
    _require_n(n_max)
    d = diff_quotient_vector(params, n_max - 1)
    values = params.gamma * params.p_i * d[1:]
    return AoiDistribution(
        source_index=params.source_index,
        params=params,
        n_max=n_max,
        values=values,
        tail_mass=aoi_tail(params, n_max + 1),
        mean=aoi_mean(params),
    )


def stationary_grid(params: DerivedParams, n_max: int, m_max: int | None = None) -> np.ndarray:
    """Closed-form ``pi[n, m]`` on ``2 <= n <= n_max``, ``0 <= m < min(n, m_max + 1)``.

    Returned as an ``(n_max + 1, m_max + 1)`` array (``m_max`` defaults to
    ``n_max - 1``); entries outside the state space are zero.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    if m_max is None or m_max > n_max - 1:
        m_max = n_max - 1
    d = diff_quotient_vector(params, n_max)
    g, p_i, lam = params.gamma, params.p_i, params.lam
    grid = np.zeros((n_max + 1, m_max + 1))
    n = np.arange(2, n_max + 1)
    lam_pow = lam ** np.arange(n_max + 1)
    grid[2:, 0] = p_i * (d[n] + (g - 1.0) * d[n - 1] - lam_pow[n - 1])
    coef = g * p_i * p_i
    for m in range(1, m_max + 1):
        rows = np.arange(m + 1, n_max + 1)
        grid[rows, m] = coef * lam_pow[m - 1] * d[rows - m]
    return grid


def negligible_column(params: DerivedParams, floor: float = 1e-18) -> int | None:
    """Smallest ``m`` with ``lam**(m-1) < floor``; columns past it carry no mass."""
    lam = params.lam
    if lam <= 0.0:
        return 1
    if lam >= 1.0:
        return None
    return 2 + math.ceil(math.log(floor) / math.log(lam))


def stationary_residuals(params: DerivedParams, tail: float = 1e-14) -> dict[str, float]:
    """Max-abs residual of each balance equation family under the closed form.

    The infinite sums are truncated at the first age whose tail mass is
    below ``tail``, and columns ``m`` with ``lam**(m-1) < 1e-18`` are
    treated as zero, which keeps memory bounded for slowly decaying
    tails.  Keys: ``(2,1)``, ``(2,0)``, ``(n,1)``, ``(n,0)``, ``(n,m)``.
    """
    n_max = max(tail_cutoff(params, tail), 4)
    m_cap = negligible_column(params)
    m_max = n_max - 1 if m_cap is None else max(2, min(n_max - 1, m_cap))
    pi = stationary_grid(params, n_max, m_max)
    g, p_i, p, lam = params.gamma, params.p_i, params.p, params.lam

    col1_total = pi[2:, 1].sum()
    res = {
        "(2,1)": abs(pi[2, 1] - g * p_i * col1_total),
        "(2,0)": abs(pi[2, 0] - g * (1.0 - p_i) * col1_total),
    }

    # delivered[n] = sum_{k>=n} pi[k, n-1], i.e. the whole column n-1:
    # service completions landing on AoI n
    n = np.arange(3, n_max + 1)
    col_total = pi.sum(axis=0)
    delivered = np.zeros(n.size)
    reach = min(n.size, m_max - 1)
    delivered[:reach] = col_total[2:2 + reach]
    # in_service[n-1] = sum_{k=1}^{n-2} pi[n-1, k]
    in_service = pi[n - 1, 1:].sum(axis=1)
    rhs1 = p_i * pi[n - 1, 0] + g * p_i * delivered + (1.0 - g) * p_i * in_service
    rhs0 = (
        (1.0 - p_i) * pi[n - 1, 0]
        + g * (1.0 - p_i) * delivered
        + (1.0 - g) * (p - p_i) * in_service
    )
    res["(n,1)"] = float(np.max(np.abs(pi[n, 1] - rhs1)))
    res["(n,0)"] = float(np.max(np.abs(pi[n, 0] - rhs0)))

    worst = 0.0
    for m in range(2, m_max + 1):
        rows = np.arange(m + 1, n_max + 1)
        worst = max(worst, float(np.max(np.abs(pi[rows, m] - lam * pi[rows - 1, m - 1]))))
    res["(n,m)"] = worst
    return res


def normalization_identity(params: DerivedParams) -> float:
    """``(1 - alpha)(1 - beta) - gamma*p_i``; zero when the pmf sums to one."""
    return (1.0 - params.alpha) * (1.0 - params.beta) - params.gamma * params.p_i


def mean_from_pmf(params: DerivedParams, tail: float = 1e-16) -> float:
    """``sum n * pmf(n)`` truncated where the tail drops below ``tail``."""
    dist = aoi_distribution(params, tail=tail)
    return float(math.fsum(dist.support * dist.values))
