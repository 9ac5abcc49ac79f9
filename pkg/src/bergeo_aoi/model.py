"""System configuration and derived per-source parameters.

A configuration is an ordered list of sources, each with an update
generation probability ``q`` and a per-slot transmission success
probability ``gamma``.  Source indices are 1-based everywhere in the
public API.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

MAX_SOURCES = 20
REPEATED_ROOT_TOL = 1e-12
_NEGATIVE_DISC_TOL = 1e-12


class ConfigError(ValueError):
    """Raised for configurations outside the model's domain."""


@dataclass(frozen=True)
class Source:
    q: float
    gamma: float


@dataclass(frozen=True)
class SystemConfig:
    sources: tuple[Source, ...]

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def q(self) -> tuple[float, ...]:
        return tuple(s.q for s in self.sources)

    @property
    def gamma(self) -> tuple[float, ...]:
        return tuple(s.gamma for s in self.sources)

    def to_json(self) -> dict:
        return {"sources": [{"q": s.q, "gamma": s.gamma} for s in self.sources]}


@dataclass(frozen=True)
class DerivedParams:
    """Per-source quantities shared by the analytic, chain and sim engines.

    ``alpha`` and ``beta`` are the roots of
    ``x**2 - (1 - gamma*p_i + lam)*x + lam = 0`` with ``alpha <= beta``.
    """

    source_index: int
    p_i: float
    p: float
    lam: float
    alpha: float
    beta: float
    repeated_root: bool
    gamma: float

    @property
    def root_gap(self) -> float:
        return self.beta - self.alpha


def validate_config(raw: Iterable) -> SystemConfig:
    """Build a :class:`SystemConfig` from ``(q, gamma)`` pairs or mappings.

    Each entry may be a 2-sequence or a mapping with ``q`` and ``gamma``
    keys.  Bounds are strict on the low side: ``0 < q <= 1`` and
    ``0 < gamma <= 1``.
    """
    items = list(raw)
    if not items:
        raise ConfigError("configuration must contain at least one source")
    if len(items) > MAX_SOURCES:
        raise ConfigError(
            f"at most {MAX_SOURCES} sources are supported (got {len(items)}); "
            "subset enumeration is exponential in N"
        )
    sources = []
    for idx, item in enumerate(items, start=1):
        if isinstance(item, dict):
            try:
                q, gamma = item["q"], item["gamma"]
            except KeyError as exc:
                raise ConfigError(f"source {idx}: missing key {exc.args[0]!r}") from None
        else:
            try:
                q, gamma = item
            except (TypeError, ValueError):
                raise ConfigError(f"source {idx}: expected a (q, gamma) pair") from None
        q = _as_probability(q, idx, "q")
        gamma = _as_probability(gamma, idx, "gamma")
        sources.append(Source(q, gamma))
    return SystemConfig(tuple(sources))


def _as_probability(value, idx: int, name: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"source {idx}: {name} must be a number")
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"source {idx}: {name} must be a number") from None
    if not math.isfinite(x):
        raise ConfigError(f"source {idx}: {name} must be finite")
    if x <= 0.0:
        raise ConfigError(f"source {idx}: {name} must be > 0 (got {x})")
    if x > 1.0:
        raise ConfigError(f"source {idx}: {name} must be <= 1 (got {x})")
    return x


def load_config(path: str | Path) -> SystemConfig:
    """Read the JSON config format ``{"sources": [{"q": .., "gamma": ..}, ...]}``."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict) or not isinstance(data.get("sources"), list):
        raise ConfigError(f"{path}: expected an object with a 'sources' list")
    return validate_config(data["sources"])


def _check_index(config: SystemConfig, i: int) -> None:
    if not 1 <= i <= config.n_sources:
        raise IndexError(f"source index {i} out of range 1..{config.n_sources}")


def effective_generation_probability(config: SystemConfig, i: int) -> float:
    """Probability that source ``i`` generates an update and wins selection.

    Sums over every subset H of the other sources that also generate in
    the same slot; the winner is picked uniformly, hence the ``1/(|H|+1)``.
    """
    _check_index(config, i)
    q_i = config.sources[i - 1].q
    others = [s.q for k, s in enumerate(config.sources, start=1) if k != i]
    total = 0.0
    for mask in itertools.product((False, True), repeat=len(others)):
        weight = q_i
        size = 0
        for gen, qj in zip(mask, others):
            if gen:
                weight *= qj
                size += 1
            else:
                weight *= 1.0 - qj
        total += weight / (size + 1)
    return total


def overall_generation_probability(config: SystemConfig) -> float:
    prod = 1.0
    for s in config.sources:
        prod *= 1.0 - s.q
    return 1.0 - prod


def quadratic_roots(b: float, c: float) -> tuple[float, float, bool]:
    """Roots of ``x**2 - b*x + c`` for ``b >= 0``, ``c >= 0``, real discriminant.

    Returns ``(small, large, repeated)``.  The large root comes from the
    sign-matched formula and the small one from ``c / large`` so that a
    tiny ``c`` does not cancel.
    """
    disc = b * b - 4.0 * c
    if disc < -_NEGATIVE_DISC_TOL:
        raise ArithmeticError(f"negative discriminant {disc!r}")
    if disc < REPEATED_ROOT_TOL:
        r = 0.5 * b
        return r, r, True
    if c == 0.0:
        return 0.0, b, False
    large = 0.5 * (b + math.sqrt(disc))
    return c / large, large, False


def derive_params(config: SystemConfig, i: int) -> DerivedParams:
    _check_index(config, i)
    gamma = config.sources[i - 1].gamma
    p_i = effective_generation_probability(config, i)
    # one source: p == p_i exactly, so the other-source preemption weight is 0
    p = p_i if config.n_sources == 1 else overall_generation_probability(config)
    lam = (1.0 - gamma) * (1.0 - p)
    alpha, beta, repeated = quadratic_roots(1.0 - gamma * p_i + lam, lam)
    return DerivedParams(
        source_index=i,
        p_i=p_i,
        p=p,
        lam=lam,
        alpha=alpha,
        beta=beta,
        repeated_root=repeated,
        gamma=gamma,
    )


def derive_all(config: SystemConfig) -> list[DerivedParams]:
    return [derive_params(config, i) for i in range(1, config.n_sources + 1)]


def parse_inline(q: Sequence[float], gamma: Sequence[float]) -> SystemConfig:
    if len(q) != len(gamma):
        raise ConfigError(f"--q has {len(q)} values but --gamma has {len(gamma)}")
    return validate_config(zip(q, gamma))
