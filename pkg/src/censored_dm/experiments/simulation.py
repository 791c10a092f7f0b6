"""Simulated data sets from the excess model and censoring patterns.

Points above a radial threshold ``r_s`` on the unit-Frechet scale follow the
limiting Poisson model exactly; the remaining days, and coordinates falling
below their marginal threshold, are sub-threshold fillers whose law plays no
role in inference since they are censored at the threshold anyway.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data_model import EXACT, INTERVAL, MISSING, Observation
from ..dm_core import DmParams, sample_angle
from ..errors import DomainError
from ..margins import MarginParams, inverse_frechet_vec


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    psi: DmParams
    chi: MarginParams
    n_eff: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be positive")
        if self.psi.d != self.chi.d:
            raise DomainError("psi and chi dimensions differ")
        if self.n_eff is not None and not 1 <= self.n_eff <= self.n:
            raise DomainError("n_eff must lie in [1, n]")
        if self.n_rad_exc > self.n:
            raise DomainError("more radial excesses than days: increase n")

    @property
    def d(self) -> int:
        return self.chi.d

    @property
    def r_s(self) -> float:
        """Radial simulation threshold ``-1 / log(1 - max zeta)``."""
        return float(-1.0 / np.log1p(-np.max(self.chi.zeta)))

    @property
    def n_rad_exc(self) -> int:
        return int(round(self.n * self.d / self.r_s))

    @classmethod
    def deflated(cls, n: int, psi: DmParams, chi: MarginParams, ratio: float) -> "SimulationConfig":
        """Config keeping ``floor(n * ratio)`` days, ``ratio`` being one over the mean cluster size."""
        return cls(n, psi, chi, int(np.floor(n * ratio)))


def _fillers(v, rng, size):
    # uniform on (v/2, v): below the threshold, so always censored at it
    return v * (0.5 + 0.5 * rng.random((size, len(v))))


def simulate_frechet(cfg: SimulationConfig, rng: np.random.Generator):
    """Radial excesses on the unit-Frechet scale and the days carrying them.

    Returns ``(days, points)`` with ``points`` of shape ``(n_rad_exc, d)``.
    """
    m = cfg.n_rad_exc
    radii = cfg.r_s / (1.0 - rng.random(m))
    angles = sample_angle(cfg.psi, rng, m) if m else np.empty((0, cfg.d))
    days = np.sort(rng.choice(cfg.n, size=m, replace=False))
    return days, radii[:, None] * angles


def simulate_dataset(cfg: SimulationConfig, rng: np.random.Generator) -> list[Observation]:
    """Exactly observed daily records: ``n_rad_exc`` radial excesses among fillers.

    With ``n_eff`` set, that many days are kept, chosen uniformly without
    replacement (original day indices are preserved).
    """
    chi = cfg.chi
    v, u = chi.threshold, chi.u
    values = _fillers(v, rng, cfg.n)
    days, pts = simulate_frechet(cfg, rng)
    above = pts >= u
    with np.errstate(invalid="ignore", divide="ignore"):
        y = inverse_frechet_vec(np.where(above, pts, u), chi.sigma, chi.xi, chi.zeta, v, u)
    values[days] = np.where(above, y, values[days])
    keep = np.arange(cfg.n)
    if cfg.n_eff is not None and cfg.n_eff < cfg.n:
        keep = np.sort(rng.choice(cfg.n, size=cfg.n_eff, replace=False))
    return [Observation.exact(int(t), values[t]) for t in keep]


@dataclass(frozen=True)
class CensoringPattern:
    """Per day and station: a perception bound on the unit-Frechet scale, ``nan`` if
    uncensored, or ``inf`` for a missing value.

    Days are matched by index; days beyond the pattern are left untouched.
    """

    bounds: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if np.any(b[~np.isnan(b)] <= 0):
            raise DomainError("censoring bounds must be positive")
        object.__setattr__(self, "bounds", b)

    @property
    def n_days(self) -> int:
        return self.bounds.shape[0] if self.bounds.size else 0

    @classmethod
    def empty(cls, d: int) -> "CensoringPattern":
        return cls(np.empty((0, d)))


def apply_censoring(dataset, pattern: CensoringPattern, chi: MarginParams) -> list[Observation]:
    """Hide values not exceeding their perception bound.

    A value at or below its bound becomes left-censored ``(0, bound)``;
    bounds are mapped to the data scale with ``chi`` (bounds at or below
    ``u_j`` map to ``v_j``: such records are censored at the threshold
    anyway). Missing markers produce missing entries.
    """
    if pattern.n_days == 0:
        return list(dataset)
    if pattern.bounds.shape[1] != chi.d:
        raise DomainError("pattern width does not match the number of stations")
    days = np.array([o.day for o in dataset])
    if len(days) and days.max() >= pattern.n_days:
        raise DomainError(f"pattern covers {pattern.n_days} days, data reach day {days.max()}")
    out = []
    for o in dataset:
        b = pattern.bounds[o.day]
        miss = np.isposinf(b)
        cens = np.isfinite(b)
        data_b = np.where(
            cens,
            inverse_frechet_vec(np.where(cens, np.maximum(b, chi.u), chi.u), chi.sigma, chi.xi, chi.zeta, chi.threshold, chi.u),
            np.nan,
        )
        kind = o.kind.copy()
        value, lower, upper = o.value.copy(), o.lower.copy(), o.upper.copy()
        with np.errstate(invalid="ignore"):
            hidden = cens & (o.kind == EXACT) & (o.value <= data_b)
        kind[hidden] = INTERVAL
        value[hidden], lower[hidden], upper[hidden] = np.nan, 0.0, data_b[hidden]
        kind[miss] = MISSING
        out.append(Observation(o.day, kind, value, lower, upper))
    return out


def synthetic_pattern(
    n: int,
    u,
    n_systematic: int,
    historical_stations=(0,),
    historical_bound: float = 10.0,
) -> CensoringPattern:
    """Two-period pattern mimicking a sparse historical record.

    The last ``n_systematic`` days are fully observed; earlier days observe
    only ``historical_stations``, each above ``historical_bound * u_j``, the
    others being missing.
    """
    u = np.asarray(u, dtype=float)
    d = len(u)
    if not 0 <= n_systematic <= n:
        raise DomainError("n_systematic must lie in [0, n]")
    b = np.full((n, d), np.nan)
    hist = n - n_systematic
    b[:hist] = np.inf
    for j in historical_stations:
        b[:hist, j] = historical_bound * u[j]
    return CensoringPattern(b)


def exact_count_histogram(dataset, v) -> np.ndarray:
    """Counts of above-threshold records by number of exact coordinates above ``v`` (index 0..d)."""
    from ..data_model import Position, classify

    v = np.asarray(v, dtype=float)
    counts = np.zeros(len(v) + 1, dtype=int)
    for o in dataset:
        if classify(o, v) is Position.ABOVE:
            with np.errstate(invalid="ignore"):
                counts[int(np.sum((o.kind == EXACT) & (o.value > v)))] += 1
    return counts
