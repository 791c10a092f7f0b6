"""Data augmentation: latent censored coordinates and auxiliary Poisson processes.

Latent coordinates complete the censored, non-missing components of
above-threshold records; their full conditionals are finite mixtures of
truncated Beta laws after the change of variable ``U = z / (s + z)``,
``s`` being the sum of the other coordinates. Missing components are
integrated out analytically by marginalizing the mixture.

The exponential terms of the censored Poisson likelihood are replaced by
Poisson processes with intensity ``tau * lambda`` above a radial threshold,
weighted by ``(1 - 1/tau) ** hits``, whose expectation is
``exp(-n * lambda(A))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from .data_model import EXACT, MISSING, FrechetObs, Observation
from .dm_core import DmParams, _log_exponent_density, _marginalize_keep, sample_angle, sample_components
from .errors import DomainError, NumericalError
from .margins import MarginParams, log_jacobian_vec
from .special import log_beta_mass, sample_truncated_beta


# ---------------------------------------------------------------- conditionals


@dataclass(frozen=True)
class ConditionalMixture:
    """Law of one latent coordinate given the others, as a truncated-Beta mixture."""

    weights: np.ndarray
    a: np.ndarray
    b: np.ndarray
    scale: float
    lower: float
    upper: float
    lo: float
    hi: float
    lo_c: float
    hi_c: float


def _unit_bounds(lower, upper, s):
    """Bounds of ``U = z / (s + z)`` and their complements."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    lo = lower / (s + lower)
    lo_c = s / (s + lower)
    inf = np.isinf(upper)
    up_safe = np.where(inf, 1.0, upper)
    hi = np.where(inf, 1.0, up_safe / (s + up_safe))
    hi_c = np.where(inf, 0.0, s / (s + up_safe))
    return lo, hi, lo_c, hi_c


def _log_component_masses(j, x, lower, upper, weights, alphas, shapes):
    """Unnormalized log masses of each component for coordinate ``j`` (rows of ``x``).

    Returns ``(log_mass (n, k), a (k,), b (k,), s (n,), lo, hi, lo_c, hi_c)``.
    """
    a = alphas[:, j]
    b = shapes - a + 1.0
    others = np.delete(x, j, axis=1)
    s = others.sum(axis=1)
    lo, hi, lo_c, hi_c = _unit_bounds(lower, upper, s)
    other_alpha = np.delete(alphas, j, axis=1)
    base = np.log(weights) + gammaln(shapes) - gammaln(alphas).sum(axis=1) + betaln(a, b)
    lm = (
        base
        + np.log(others) @ (other_alpha - 1.0).T
        - np.multiply.outer(np.log(s), b)
        + log_beta_mass(a, b, lo[:, None], hi[:, None], lo_c[:, None], hi_c[:, None])
    )
    return lm, a, b, s, lo, hi, lo_c, hi_c


def conditional_mixture(j: int, point, lower: float, upper: float, psi0: DmParams) -> ConditionalMixture:
    """Full conditional of coordinate ``j`` of ``point`` on ``[lower, upper]``.

    ``point`` lists the non-missing coordinates (the value at ``j`` is
    ignored) and ``psi0`` must already be marginalized onto them.
    """
    x = np.atleast_2d(np.asarray(point, dtype=float)).copy()
    if x.shape[1] != psi0.d:
        raise DomainError("point dimension does not match the mixture")
    if not 0 <= j < psi0.d or psi0.d < 2:
        raise DomainError("conditioning needs at least one other coordinate")
    x[0, j] = 1.0
    if np.any(np.delete(x, j, axis=1) <= 0):
        raise DomainError("other coordinates must be positive")
    if not 0 <= lower <= upper:
        raise DomainError("need 0 <= lower <= upper")
    lm, a, b, s, lo, hi, lo_c, hi_c = _log_component_masses(
        j, x, np.array([lower]), np.array([upper]), psi0.weights, psi0.alphas, psi0.shapes
    )
    lm = lm[0]
    if lower < upper and not np.any(np.isfinite(lm)):
        raise NumericalError(f"all component masses vanish on [{lower}, {upper}]")
    w = np.exp(lm - logsumexp(lm)) if np.any(np.isfinite(lm)) else np.full(psi0.k, 1.0 / psi0.k)
    return ConditionalMixture(w, a, b, float(s[0]), float(lower), float(upper), float(lo[0]), float(hi[0]), float(lo_c[0]), float(hi_c[0]))


def sample_conditional(cm: ConditionalMixture, rng: np.random.Generator) -> float:
    """Draw one latent value from a conditional mixture; always inside its bounds."""
    if cm.lower == cm.upper:
        return cm.lower
    m = sample_components(cm.weights, rng, 1)[0]
    u, uc = sample_truncated_beta(cm.a[m], cm.b[m], cm.lo, cm.hi, rng, cm.lo_c, cm.hi_c)
    return _to_scale(u, uc, cm.scale, cm.lower, cm.upper)[0]


_FLOOR = np.finfo(float).tiny


def _to_scale(u, uc, s, lower, upper):
    with np.errstate(divide="ignore"):
        z = s * u / uc
    # draws underflowing to zero (tiny Dirichlet parameters) are kept at the
    # smallest normal number so that log densities stay finite
    return np.clip(z, np.maximum(lower, _FLOOR), upper)


def sample_conditional_rows(j, x, lower, upper, weights, alphas, shapes, rng):
    """Vectorized Gibbs update of coordinate ``j`` for every row of ``x``."""
    lm, a, b, s, lo, hi, lo_c, hi_c = _log_component_masses(j, x, lower, upper, weights, alphas, shapes)
    finite = np.isfinite(lm).any(axis=1)
    if not np.all(finite | (lower == upper)):
        raise NumericalError("all component masses vanish for a latent coordinate")
    with np.errstate(invalid="ignore"):
        p = np.exp(lm - logsumexp(lm, axis=1, keepdims=True))
    p = np.where(np.isfinite(p), p, 1.0 / len(weights))
    cum = np.cumsum(p, axis=1)
    comp = (rng.random(len(x))[:, None] * cum[:, -1:] > cum).sum(axis=1)
    comp = np.minimum(comp, len(weights) - 1)
    u, uc = sample_truncated_beta(a[comp], b[comp], lo, hi, rng, lo_c, hi_c)
    z = _to_scale(u, uc, s, lower, upper)
    return np.where(lower == upper, lower, z)


# ------------------------------------------------------------ latent container


def initial_latent(lower, upper):
    """Starting value inside ``[lower, upper]``: geometric midpoint on the standardized scale."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        mid = np.sqrt(lower * upper)
    return np.where(lower == 0, upper / 2, np.where(np.isinf(upper), 2 * lower, mid))


@dataclass
class AboveGroup:
    """Above-threshold records sharing the same set of missing stations.

    ``xbar`` holds completed points on the kept stations: exact standardized
    values and latent values for censored stations.
    """

    keep: np.ndarray
    rows: np.ndarray
    xbar: np.ndarray
    censored: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n(self) -> int:
        return len(self.rows)


@dataclass
class LatentAbove:
    groups: list = field(default_factory=list)
    d: int = 0

    @classmethod
    def from_frechet(cls, fobs: list[FrechetObs], d: int) -> "LatentAbove":
        patterns: dict[tuple, list[int]] = {}
        for i, f in enumerate(fobs):
            key = tuple(np.flatnonzero(f.kind != MISSING))
            patterns.setdefault(key, []).append(i)
        groups = []
        for key, rows in patterns.items():
            keep = np.array(key, dtype=int)
            kind = np.array([fobs[i].kind[keep] for i in rows])
            lower = np.array([fobs[i].lower[keep] for i in rows])
            upper = np.array([fobs[i].upper[keep] for i in rows])
            exact = kind == EXACT
            x = np.array([fobs[i].x[keep] for i in rows])
            xbar = np.where(exact, x, initial_latent(lower, upper))
            groups.append(AboveGroup(keep, np.array(rows), xbar, ~exact, lower, upper))
        return cls(groups, d)

    def within_bounds(self) -> bool:
        return all(
            np.all((g.xbar >= g.lower) & (g.xbar <= g.upper) | ~g.censored) for g in self.groups
        )

    def completed(self, i: int) -> np.ndarray:
        """Completed point of record ``i`` on all stations (``nan`` where missing)."""
        for g in self.groups:
            pos = np.flatnonzero(g.rows == i)
            if len(pos):
                out = np.full(self.d, np.nan)
                out[g.keep] = g.xbar[pos[0]]
                return out
        raise KeyError(i)


def group_params(psi: DmParams, keep, d: int):
    """Mixture parameters ``(weights, alphas, shapes)`` on the kept stations."""
    if len(keep) == d:
        return psi.weights, psi.alphas, psi.shapes
    m = _marginalize_keep(psi.weights, psi.centers, psi.shapes, list(keep))
    return m.weights, m.alphas, m.shapes


def gibbs_sweep_z_above(latent: LatentAbove, psi: DmParams, rng: np.random.Generator) -> LatentAbove:
    """One systematic sweep over every censored coordinate (exact Gibbs updates).

    Within a group, coordinate ``j`` is refreshed for all records at once;
    records are independent given ``psi`` so this equals record-by-record
    coordinate-wise updating.
    """
    for g in latent.groups:
        if g.keep.size < 2 or not g.censored.any():
            if g.keep.size == 1 and g.censored.any():
                # a single kept station carries no angular information: its law is x^-2 on the box
                _sweep_one_dim(g, rng)
            continue
        w, al, sh = group_params(psi, g.keep, latent.d)
        for j in range(g.keep.size):
            rows = np.flatnonzero(g.censored[:, j])
            if rows.size == 0:
                continue
            g.xbar[rows, j] = sample_conditional_rows(
                j, g.xbar[rows], g.lower[rows, j], g.upper[rows, j], w, al, sh, rng
            )
    return latent


def _sweep_one_dim(g: AboveGroup, rng):
    rows = np.flatnonzero(g.censored[:, 0])
    lo, hi = g.lower[rows, 0], g.upper[rows, 0]
    # density proportional to x^-2: 1/x is uniform between 1/hi and 1/lo
    with np.errstate(divide="ignore"):
        a, b = 1.0 / hi, 1.0 / lo
    v = rng.random(rows.size)
    g.xbar[rows, 0] = np.clip(1.0 / (b + v * (a - b)), np.maximum(lo, _FLOOR), hi)


def group_log_density(g: AboveGroup, psi: DmParams, d: int) -> np.ndarray:
    """Log marginal exponent density at each completed point of a group."""
    if g.keep.size == 1:
        return -2.0 * np.log(g.xbar[:, 0])
    w, al, sh = group_params(psi, g.keep, d)
    return _log_exponent_density(g.xbar, w, al, sh)


def loglik_above(o: Observation, fobs: FrechetObs, latent: dict, psi: DmParams, chi: MarginParams) -> float:
    """Augmented log-likelihood term of one above-threshold record.

    ``latent`` maps each censored, non-missing station to its latent value.
    Returns ``-inf`` when the completed point leaves the censoring box.
    """
    keep = np.flatnonzero(fobs.kind != MISSING)
    x = np.where(fobs.kind == EXACT, fobs.x, np.nan)
    for j, z in latent.items():
        if fobs.kind[j] in (MISSING, EXACT):
            raise DomainError(f"station {j} is not a censored coordinate")
        if not fobs.lower[j] <= z <= fobs.upper[j]:
            return -np.inf
        x[j] = z
    xk = x[keep]
    if np.any(~(xk > 0)):
        return -np.inf
    if keep.size == 1:
        dens = -2.0 * np.log(xk[0])
    else:
        w, al, sh = group_params(psi, keep, psi.d)
        dens = float(_log_exponent_density(xk[None, :], w, al, sh)[0])
    return dens + log_jacobian_sum(o, fobs, chi)


def log_jacobian_sum(o: Observation, fobs: FrechetObs, chi: MarginParams) -> float:
    ex = fobs.kind == EXACT
    if not ex.any():
        return 0.0
    return float(
        np.sum(log_jacobian_vec(o.value[ex], chi.sigma[ex], chi.xi[ex], chi.zeta[ex], chi.threshold[ex]))
    )


# ------------------------------------------------------ augmentation processes


@dataclass
class AugProcess:
    """Poisson process with intensity ``tau * lambda`` on ``{|x|_1 > min(bounds)/n_block}``.

    Points are stored in pseudo-polar form (radius, angle).
    """

    bounds: np.ndarray
    n_block: float
    tau: float
    radii: np.ndarray
    angles: np.ndarray
    hits: int = 0

    @property
    def r_min(self) -> float:
        return float(np.min(self.bounds) / self.n_block)

    @property
    def n_points(self) -> int:
        return len(self.radii)

    def count_hits(self) -> int:
        return count_hits(self.radii, self.angles, self.bounds, self.n_block)

    def points(self) -> np.ndarray:
        return self.radii[:, None] * self.angles


def count_hits(radii, angles, bounds, n_block) -> int:
    """Number of points outside the box ``[0, bounds / n_block]``."""
    if len(radii) == 0:
        return 0
    reach = radii * np.max(angles / np.asarray(bounds), axis=1) * n_block
    return int(np.count_nonzero(reach > 1.0))


def expected_points(bounds, n_block, d, tau) -> float:
    return tau * d * n_block / float(np.min(bounds))


def sample_aug_process(bounds, n_block: float, psi: DmParams, tau: float, rng: np.random.Generator) -> AugProcess:
    """Exact draw of an augmentation process for the box ``[0, bounds / n_block]``."""
    if not tau > 1:
        raise DomainError("tau must exceed 1")
    bounds = np.asarray(bounds, dtype=float)
    if not np.isfinite(bounds).any() or np.any(bounds <= 0):
        raise DomainError("bounds must be positive with at least one finite entry")
    n = rng.poisson(expected_points(bounds, n_block, psi.d, tau))
    r_min = np.min(bounds) / n_block
    radii = r_min / (1.0 - rng.random(n))
    angles = sample_angle(psi, rng, n) if n else np.empty((0, psi.d))
    proc = AugProcess(bounds, float(n_block), float(tau), radii, angles)
    proc.hits = proc.count_hits()
    return proc


def phi_weight(proc: AugProcess) -> float:
    """Weight ``(1 - 1/tau) ** hits``."""
    return (1.0 - 1.0 / proc.tau) ** proc.hits


def log_phi(proc: AugProcess) -> float:
    return proc.hits * np.log1p(-1.0 / proc.tau)


def log_process_density(proc: AugProcess, psi: DmParams) -> float:
    """Log density of the point configuration under its Poisson law given ``psi``.

    With respect to ``dr dw`` per point; includes the ``-log N!`` term.
    """
    d = psi.d
    mean = expected_points(proc.bounds, proc.n_block, d, proc.tau)
    n = proc.n_points
    if n == 0:
        return -mean
    if np.any(proc.radii <= proc.r_min):
        return -np.inf
    # angle coordinates that underflowed to zero are read as the smallest normal
    # number, keeping the density finite where a Dirichlet parameter is below one
    logw = np.log(np.maximum(proc.angles, _FLOOR))
    const = np.log(psi.weights) + gammaln(psi.shapes) - gammaln(psi.alphas).sum(axis=1)
    h = logsumexp(logw @ (psi.alphas - 1.0).T + const, axis=1)
    return float(-gammaln(n + 1) - mean + n * np.log(proc.tau * d) - 2 * np.log(proc.radii).sum() + h.sum())


def log_censored_integral(j: int, point, lower: float, upper: float, psi0: DmParams) -> float:
    """``log`` of the exponent density integrated over coordinate ``j`` on ``[lower, upper]``."""
    x = np.atleast_2d(np.asarray(point, dtype=float)).copy()
    x[0, j] = 1.0
    lm = _log_component_masses(
        j, x, np.array([lower]), np.array([upper]), psi0.weights, psi0.alphas, psi0.shapes
    )[0][0]
    return float(np.log(psi0.d) + logsumexp(lm))
