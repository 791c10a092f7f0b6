"""Generalized-Pareto margins above thresholds and the unit-Frechet standardization.

Above its threshold ``v_j`` station ``j`` has

    F_j(y) = 1 - zeta_j * (1 + xi_j (y - v_j) / sigma_j) ** (-1 / xi_j),

and the standardized value is ``T_j(y) = -1 / log F_j(y)``. Internally the
tail ratio ``s = (1 - F) / zeta`` is carried in log space so that both the
transform and its Jacobian keep full precision far into the tail.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class MarginParams:
    """Marginal parameters of ``d`` stations.

    ``shape`` is a scalar in shared-shape mode (the default) or a length-d
    array when ``per_station_shape`` is set.
    """

    log_scale: np.ndarray
    shape: np.ndarray | float
    zeta: np.ndarray
    threshold: np.ndarray
    per_station_shape: bool = False
    u: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.log_scale, dtype=float))
        z = np.atleast_1d(np.asarray(self.zeta, dtype=float))
        v = np.atleast_1d(np.asarray(self.threshold, dtype=float))
        d = ls.shape[0]
        if z.shape != (d,) or v.shape != (d,):
            raise DomainError("log_scale, zeta and threshold must have equal length")
        if np.any(~((z > 0) & (z < 1))):
            raise DomainError(f"exceedance probabilities must lie in (0, 1), got {z}")
        if not np.all(np.isfinite(ls)) or not np.all(np.isfinite(v)):
            raise DomainError("log scales and thresholds must be finite")
        if self.per_station_shape:
            sh = np.atleast_1d(np.asarray(self.shape, dtype=float))
            if sh.shape != (d,):
                raise DomainError("per-station shapes need one value per station")
        else:
            sh = float(np.asarray(self.shape, dtype=float).reshape(-1)[0])
            if np.ndim(self.shape) and np.any(np.asarray(self.shape) != sh):
                raise DomainError("shared-shape mode requires equal shapes")
        if not np.all(np.isfinite(sh)):
            raise DomainError("shape must be finite")
        object.__setattr__(self, "log_scale", ls)
        object.__setattr__(self, "zeta", z)
        object.__setattr__(self, "threshold", v)
        object.__setattr__(self, "shape", sh)
        object.__setattr__(self, "u", threshold_frechet(z))

    @property
    def d(self) -> int:
        return self.log_scale.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def xi(self) -> np.ndarray:
        """Per-station shapes as a length-d array."""
        return np.broadcast_to(np.asarray(self.shape, dtype=float), (self.d,))

    def vector(self) -> np.ndarray:
        """The sampled parameter vector ``(log sigma_1..d, xi[s])``."""
        return np.concatenate([self.log_scale, np.atleast_1d(self.shape)])

    def with_vector(self, chi) -> "MarginParams":
        """Copy with new ``(log sigma, xi)``; only finiteness needs checking."""
        chi = np.asarray(chi, dtype=float)
        d = self.d
        if chi.shape != (d + (d if self.per_station_shape else 1),):
            raise DomainError("parameter vector has the wrong length")
        if not np.isfinite(chi).all():
            raise DomainError("log scales and shapes must be finite")
        obj = object.__new__(MarginParams)
        for name, val in (
            ("log_scale", chi[:d]),
            ("shape", chi[d:] if self.per_station_shape else float(chi[d])),
            ("zeta", self.zeta),
            ("threshold", self.threshold),
            ("per_station_shape", self.per_station_shape),
            ("u", self.u),
        ):
            object.__setattr__(obj, name, val)
        return obj

    def to_dict(self) -> dict:
        return {
            "log_scale": self.log_scale.tolist(),
            "shape": np.atleast_1d(self.shape).tolist() if self.per_station_shape else float(self.shape),
            "zeta": self.zeta.tolist(),
            "threshold": self.threshold.tolist(),
            "per_station_shape": self.per_station_shape,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MarginParams":
        return cls(
            np.array(data["log_scale"]),
            np.array(data["shape"]) if data.get("per_station_shape") else data["shape"],
            np.array(data["zeta"]),
            np.array(data["threshold"]),
            bool(data.get("per_station_shape", False)),
        )


@dataclass(frozen=True)
class ReturnLevelQuery:
    """Return-level request: station ``j`` and period ``T`` in observation units."""

    station: int
    period: float
    obs_per_year: int = 365

    @classmethod
    def from_years(cls, station: int, years: float, obs_per_year: int = 365) -> "ReturnLevelQuery":
        return cls(station, years * obs_per_year, obs_per_year)


def threshold_frechet(zeta):
    """Unit-Frechet image of the thresholds, ``-1 / log(1 - zeta)``."""
    return -1.0 / np.log1p(-np.asarray(zeta, dtype=float))


def log_tail_ratio(y, sigma, xi, v):
    """``log((1 - F(y)) / zeta)``; ``-inf`` beyond a finite upper endpoint.

    All arguments broadcast; ``y >= v`` is assumed.
    """
    z = (np.asarray(y, dtype=float) - v) / sigma
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = xi * z
        gp = -np.log1p(arg) / np.where(xi == 0, 1.0, xi)
        gp = np.where(arg <= -1, -np.inf, gp)
    return np.where(xi == 0, -z, gp)


def frechet_from_log_tail(log_s, zeta):
    """Standardized value ``-1 / log(1 - zeta * s)`` from ``log s``."""
    with np.errstate(divide="ignore"):
        return -1.0 / np.log1p(-zeta * np.exp(log_s))


def _station(chi: MarginParams, j: int):
    if not 0 <= j < chi.d:
        raise DomainError(f"station index {j} out of range")
    return chi.sigma[j], chi.xi[j], chi.zeta[j], chi.threshold[j]


def _check_above(y, v):
    y = np.asarray(y, dtype=float)
    if np.any(~(y >= v)):
        raise DomainError("value below the marginal threshold; sub-threshold values must be censored")
    return y


def marginal_cdf(y, j: int, chi: MarginParams):
    """GPD-tail distribution function of station ``j`` above its threshold."""
    sigma, xi, zeta, v = _station(chi, j)
    y = _check_above(y, v)
    return 1.0 - zeta * np.exp(log_tail_ratio(y, sigma, xi, v))


def frechet_transform(y, j: int, chi: MarginParams):
    """Map values above threshold to the unit-Frechet scale; ``T(v_j) = u_j``."""
    sigma, xi, zeta, v = _station(chi, j)
    y = _check_above(y, v)
    return frechet_from_log_tail(log_tail_ratio(y, sigma, xi, v), zeta)


def inverse_frechet_transform(x, j: int, chi: MarginParams):
    """Exact inverse of :func:`frechet_transform` on ``[u_j, inf)``."""
    sigma, xi, zeta, v = _station(chi, j)
    u = chi.u[j]
    x = np.asarray(x, dtype=float)
    if np.any(~(x >= u)):
        raise DomainError("standardized value below the threshold image u_j")
    return inverse_frechet_vec(x, sigma, xi, zeta, v, u)


def inverse_frechet_vec(x, sigma, xi, zeta, v, u):
    log_s = np.log(-np.expm1(-1.0 / x) / zeta)
    with np.errstate(divide="ignore", invalid="ignore"):
        gp = sigma * np.expm1(-xi * log_s) / np.where(xi == 0, 1.0, xi)
    y = v + np.where(xi == 0, -sigma * log_s, gp)
    return np.where(x == u, v, y)


def log_jacobian_vec(y, sigma, xi, zeta, v):
    """``log dT/dy`` for values above threshold (broadcasting)."""
    log_s = log_tail_ratio(y, sigma, xi, v)
    x = frechet_from_log_tail(log_s, zeta)
    return -np.log(sigma) + np.log(zeta) + (1.0 + xi) * log_s + 2.0 * np.log(x) + 1.0 / x


def jacobian(y, j: int, chi: MarginParams):
    """Derivative ``dT_j/dy``; written ``sigma^-1 zeta^-xi x^2 e^(1/x) (1 - e^(-1/x))^(1+xi)``."""
    sigma, xi, zeta, v = _station(chi, j)
    y = _check_above(y, v)
    return np.exp(log_jacobian_vec(y, sigma, xi, zeta, v))


def return_level(q: ReturnLevelQuery, chi: MarginParams):
    """Level exceeded on average once every ``q.period`` observations."""
    sigma, xi, zeta, v = _station(chi, q.station)
    return return_level_vec(q.period, sigma, xi, zeta, v)


def return_level_vec(period, sigma, xi, zeta, v):
    period = np.asarray(period, dtype=float)
    zt = zeta * period
    # T = 1/zeta rarely round-trips exactly in floating point
    at_threshold = np.abs(zt - 1.0) <= 8 * np.finfo(float).eps
    if np.any((zt < 1.0) & ~at_threshold):
        raise DomainError("return period too short: quantile would lie below the threshold")
    lz = np.log(np.maximum(zt, 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        gp = sigma * np.expm1(xi * lz) / np.where(xi == 0, 1.0, xi)
    q = v + np.where(xi == 0, sigma * lz, gp)
    return np.where(at_threshold, v, q)


def exceedance_prob(level, sigma, xi, zeta, v):
    """``P(Y > level)`` for levels above threshold (broadcasting)."""
    return zeta * np.exp(log_tail_ratio(level, sigma, xi, v))
