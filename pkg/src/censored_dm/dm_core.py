"""Dirichlet-mixture angular measures and their exponent measures.

All densities are evaluated in log space. Angular points are stored with all
``d`` coordinates; densities on the simplex are taken with respect to the
Lebesgue measure on the first ``d - 1`` coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DomainError

WEIGHT_TOL = 1e-12
MOMENT_TOL = 1e-10
BOUNDARY_EPS = 1e-300


@dataclass(frozen=True)
class DmParams:
    """A k-component Dirichlet mixture on the d-simplex.

    Attributes
    ----------
    weights : (k,) array
        Mixture weights, positive and summing to one.
    centers : (k, d) array
        Component centers of mass, each on the open simplex.
    shapes : (k,) array
        Positive concentration parameters.
    """

    weights: np.ndarray
    centers: np.ndarray
    shapes: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        s = np.atleast_1d(np.asarray(self.shapes, dtype=float))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "shapes", s)
        k = w.shape[0]
        if c.shape[0] != k or s.shape[0] != k:
            raise DomainError(f"inconsistent component counts {w.shape}, {c.shape}, {s.shape}")
        if c.shape[1] < 1:
            raise DomainError("dimension must be at least 1")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise DomainError(f"weights must be positive and sum to 1, got {w}")
        if np.any(c <= 0) or np.any(np.abs(c.sum(axis=1) - 1.0) > WEIGHT_TOL):
            raise DomainError("centers must lie on the open simplex")
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise DomainError(f"shapes must be positive, got {s}")

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def alphas(self) -> np.ndarray:
        """Dirichlet parameters ``nu_m * mu_m`` as a (k, d) array."""
        return self.shapes[:, None] * self.centers

    def moment_residual(self) -> float:
        return float(np.max(np.abs(self.weights @ self.centers - 1.0 / self.d)))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "centers": self.centers.tolist(),
            "shapes": self.shapes.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DmParams":
        return cls(np.array(data["weights"]), np.array(data["centers"]), np.array(data["shapes"]))

    @classmethod
    def trusted(cls, weights: np.ndarray, centers: np.ndarray, shapes: np.ndarray) -> "DmParams":
        """Construct without validation, for float arrays valid by construction (sampler hot paths)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "weights", weights)
        object.__setattr__(obj, "centers", centers)
        object.__setattr__(obj, "shapes", shapes)
        return obj

    @classmethod
    def single(cls, d: int, shape: float) -> "DmParams":
        """The only valid one-component mixture: centered at the simplex barycenter."""
        return cls(np.ones(1), np.full((1, d), 1.0 / d), np.array([float(shape)]))


@dataclass(frozen=True)
class FailureRegion:
    """Region of the positive orthant on the standardized (unit Frechet) scale.

    ``kind`` is ``"rect_complement"`` (complement of the box ``[0, bounds / scale]``)
    or ``"radial"`` (``{x : sum(x) > r_min}``).
    """

    kind: str
    bounds: np.ndarray | None = None
    r_min: float | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise DomainError("scale must be positive")
        if self.kind == "rect_complement":
            b = np.asarray(self.bounds, dtype=float)
            if b.ndim != 1 or np.any(b <= 0):
                raise DomainError("rectangular bounds must be positive")
            object.__setattr__(self, "bounds", b)
        elif self.kind == "radial":
            if self.r_min is None or self.r_min <= 0:
                raise DomainError("r_min must be positive")
        else:
            raise DomainError(f"unknown region kind {self.kind!r}")


def _as_simplex(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or np.any(np.abs(w.sum(axis=-1) - 1.0) > WEIGHT_TOL):
        raise DomainError("point is not on the simplex")
    return w


def log_dirichlet_density(w, nu: float, mu) -> np.ndarray:
    """Log Dirichlet density with shape ``nu`` and center ``mu``; vectorized over rows of ``w``.

    Boundary points (a coordinate below 1e-300) give ``+inf`` when the
    corresponding exponent ``nu * mu_j - 1`` is negative, ``-inf`` when it is
    positive.
    """
    w = _as_simplex(w)
    mu = np.asarray(mu, dtype=float)
    if w.shape[-1] != mu.shape[-1]:
        raise DomainError("dimension mismatch")
    alpha = nu * mu
    lognorm = gammaln(nu) - gammaln(alpha).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(
            w < BOUNDARY_EPS,
            np.where(alpha < 1, np.inf, np.where(alpha > 1, -np.inf, 0.0)),
            (alpha - 1) * np.log(np.maximum(w, BOUNDARY_EPS)),
        )
        out = lognorm + terms.sum(axis=-1)
    # +inf and -inf on different coordinates: the density has no limit; report the pole
    return np.where(np.isnan(out), np.inf, out)


def dirichlet_density(w, nu: float, mu):
    """Dirichlet density; ``inf`` flags an unbounded density at a boundary point."""
    return np.exp(log_dirichlet_density(w, nu, mu))


def log_dm_density(w, psi: DmParams) -> np.ndarray:
    """Log mixture density ``log h_psi(w)``, vectorized over rows of ``w``."""
    w = _as_simplex(w)
    if w.shape[-1] != psi.d:
        raise DomainError(f"expected dimension {psi.d}, got {w.shape[-1]}")
    comps = np.stack(
        [log_dirichlet_density(w, nu, mu) for nu, mu in zip(psi.shapes, psi.centers)], axis=-1
    )
    with np.errstate(invalid="ignore"):
        out = logsumexp(comps + np.log(psi.weights), axis=-1)
    return np.where(np.any(np.isposinf(comps), axis=-1), np.inf, out)


def dm_density(w, psi: DmParams):
    return np.exp(log_dm_density(w, psi))


def check_moments_constraint(psi: DmParams, tol: float = MOMENT_TOL) -> bool:
    """True when the weighted centers sit at the simplex barycenter."""
    return psi.moment_residual() <= tol


def log_exponent_density(x, psi: DmParams) -> np.ndarray:
    """Log density of the exponent measure w.r.t. Lebesgue measure on the orthant.

    Uses the expanded per-component form, so no division by the radius is
    needed: ``log d + logsumexp_m [log p_m + log Gamma(nu_m) - sum_j log Gamma(a_jm)
    + sum_j (a_jm - 1) log x_j - (nu_m + 1) log r]`` with ``a = nu * mu``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != psi.d:
        raise DomainError(f"expected dimension {psi.d}, got {x.shape[-1]}")
    if np.any(~(x > 0)):
        raise DomainError("exponent density requires strictly positive coordinates")
    return _log_exponent_density(x, psi.weights, psi.alphas, psi.shapes)


def _log_exponent_density(x, weights, alphas, shapes):
    # x (..., d), alphas (k, d): no validation, used in the sampler's hot path
    d = x.shape[-1]
    logx = np.log(x)
    logr = np.log(x.sum(axis=-1))
    const = np.log(weights) + gammaln(shapes) - gammaln(alphas).sum(axis=1)
    terms = logx @ (alphas - 1).T - np.multiply.outer(logr, shapes + 1) + const
    return np.log(d) + logsumexp(terms, axis=-1)


def exponent_density(x, psi: DmParams):
    return np.exp(log_exponent_density(x, psi))


def marginalize(psi: DmParams, missing: Sequence[int]) -> DmParams:
    """Dirichlet mixture obtained by integrating the exponent measure over ``missing`` axes.

    The result lives on the simplex of the remaining coordinates (kept in
    their original order).
    """
    d = psi.d
    missing = sorted(set(int(i) for i in missing))
    if not missing or len(missing) >= d or missing[0] < 0 or missing[-1] >= d:
        raise DomainError(f"missing set must be a proper nonempty subset of 0..{d - 1}")
    keep = [j for j in range(d) if j not in missing]
    return _marginalize_keep(psi.weights, psi.centers, psi.shapes, keep)


def _marginalize_keep(weights, centers, shapes, keep):
    d = centers.shape[1]
    r = len(keep)
    kept_mass = centers[:, keep].sum(axis=1)
    new_shapes = shapes * kept_mass
    new_centers = centers[:, keep] / kept_mass[:, None]
    new_weights = (d / r) * kept_mass * weights
    # restore exact normalization lost to rounding
    new_weights = new_weights / new_weights.sum()
    new_centers = new_centers / new_centers.sum(axis=1, keepdims=True)
    return DmParams(new_weights, new_centers, new_shapes)


def sample_angle(psi: DmParams, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Exact draws from the mixture: a component by weight, then normalized gamma variates."""
    n = 1 if size is None else int(size)
    comp = sample_components(psi.weights, rng, n)
    alphas = psi.alphas
    g = np.empty((n, psi.d))
    for m in range(psi.k):
        idx = np.flatnonzero(comp == m)
        if idx.size == 0:
            continue
        # scalar shapes per column are markedly faster than a broadcast shape array
        g[idx] = np.column_stack([rng.standard_gamma(a, idx.size) for a in alphas[m]])
    s = g.sum(axis=1, keepdims=True)
    bad = ~(s[:, 0] > 0)
    if np.any(bad):
        # all gammas underflowed (tiny shapes): fall back to a log-space draw
        g[bad] = _log_space_dirichlet(alphas[comp[bad]], rng)
        s = g.sum(axis=1, keepdims=True)
    w = g / s
    return w[0] if size is None else w


def sample_components(weights, rng, n):
    cum = np.cumsum(weights)
    comp = np.searchsorted(cum, rng.random(n) * cum[-1], side="right")
    return np.minimum(comp, len(weights) - 1)


def _log_space_dirichlet(alpha_rows, rng):
    # log G = log G(a+1) + log(U)/a, shifted so the largest entry is exp(0)
    lg = np.log(rng.standard_gamma(alpha_rows + 1.0)) + np.log(rng.random(alpha_rows.shape)) / alpha_rows
    return np.exp(lg - lg.max(axis=1, keepdims=True))


def exponent_measure(
    region: FailureRegion,
    psi: DmParams,
    n_samples: int = 100_000,
    rng: np.random.Generator | None = None,
    angles: np.ndarray | None = None,
) -> tuple[float, float]:
    """Exponent measure of a failure region with a Monte-Carlo standard error.

    Uses ``lambda(complement of [0, b]) = d * E_H[max_j W_j / b_j]``; radial
    regions have the closed form ``d / r_min``. ``angles`` may be passed to
    share random numbers between calls.
    """
    d = psi.d
    if region.kind == "radial":
        return d * region.scale / region.r_min, 0.0
    if angles is None:
        if n_samples < 10_000:
            raise DomainError("n_samples must be at least 1e4")
        if rng is None:
            raise DomainError("a random generator is required")
        angles = sample_angle(psi, rng, n_samples)
    vals = np.max(angles / region.bounds, axis=1) * (d * region.scale)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))
