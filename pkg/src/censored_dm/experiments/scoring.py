"""Posterior scores and predictive summaries.

Scores compare the posterior law of a probability functional with its true
value through the quadratic loss ``(mean - P0)^2 + variance``, normalized
by ``P0^2``. The joint functional is the probability that every station
exceeds its level given that one station does.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..dm_core import DmParams, dm_density, marginalize, sample_angle
from ..errors import DomainError
from ..margins import MarginParams, exceedance_prob, frechet_from_log_tail, log_tail_ratio, return_level_vec


@dataclass
class QlEntry:
    mean: float
    variance: float
    reference: float
    ql: float
    normalized: float


@dataclass
class ScoreReport:
    marginal: list = field(default_factory=list)  # QlEntry per station
    joint: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "marginal": [vars(e) for e in self.marginal],
            "joint": [vars(e) for e in self.joint],
        }


def ql_score(values, reference: float) -> QlEntry:
    """Quadratic loss of a sample of functional values around ``reference``.

    Uses the population variance, so ``{0, 2 P0}`` scores exactly ``P0^2``.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DomainError("empty posterior sample")
    if not reference > 0:
        raise DomainError("reference probability must be positive")
    mean = float(values.mean())
    var = float(values.var())
    ql = (mean - reference) ** 2 + var
    return QlEntry(mean, var, float(reference), ql, ql / reference**2)


def marginal_excess_prob(chi: MarginParams, levels) -> np.ndarray:
    """``P(Y_j > V_j)`` for every station."""
    levels = np.asarray(levels, dtype=float)
    return exceedance_prob(levels, chi.sigma, chi.xi, chi.zeta, chi.threshold)


def frechet_levels(chi: MarginParams, levels) -> np.ndarray:
    """Unit-Frechet images of data-scale levels above the thresholds."""
    levels = np.asarray(levels, dtype=float)
    if np.any(levels < chi.threshold):
        raise DomainError("levels must lie above the marginal thresholds")
    return frechet_from_log_tail(log_tail_ratio(levels, chi.sigma, chi.xi, chi.threshold), chi.zeta)


def corner_measure(t, angles) -> tuple[float, float]:
    """``lambda({x : x_i > t_i for all i}) = d E[min_i W_i / t_i]`` with its standard error."""
    d = angles.shape[1]
    vals = d * np.min(angles / np.asarray(t, dtype=float), axis=1)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))


def joint_ratio(lam_corner: float, t_j: float) -> float:
    """``P(all exceed | station j exceeds)`` from the corner measure, under the Poisson model."""
    return float(-np.expm1(-lam_corner) / -np.expm1(-1.0 / t_j))


@dataclass
class JointEstimate:
    value: float
    se: float
    n_conditioning: int

    @property
    def available(self) -> bool:
        return self.n_conditioning > 0


def joint_excess_prob(
    chi: MarginParams, psi: DmParams, levels, j: int, n_mc: int, rng: np.random.Generator
) -> JointEstimate:
    """Monte-Carlo estimate of ``P(Y_i >= V_i for all i | Y_j >= V_j)``.

    Simulates ``n_mc`` points of the limiting Poisson process above the
    radius ``t_j`` (which contains the conditioning region) and counts the
    joint and conditioning events. ``value`` is ``nan`` when no
    conditioning event occurs.
    """
    t = frechet_levels(chi, levels)
    d = chi.d
    r0 = t[j]
    radii = r0 / (1.0 - rng.random(n_mc))
    pts = radii[:, None] * sample_angle(psi, rng, n_mc)
    cond = pts[:, j] > t[j]
    joint = np.all(pts > t, axis=1)
    n_cond = int(cond.sum())
    if n_cond == 0:
        return JointEstimate(np.nan, np.nan, 0)
    # the total mass above r0 is d / r0: scale counts into exponent measures
    mass = d / r0
    frac = joint.mean()
    lam_c = mass * frac
    se_lam = mass * np.sqrt(frac * (1 - frac) / n_mc)
    value = joint_ratio(lam_c, t[j])
    deriv = np.exp(-lam_c) / -np.expm1(-1.0 / t[j])
    return JointEstimate(value, float(deriv * se_lam), n_cond)


def joint_functional(chi: MarginParams, psi: DmParams, levels, angles) -> np.ndarray:
    """Joint functional for every conditioning station, from common angle draws."""
    t = frechet_levels(chi, levels)
    lam, _ = corner_measure(t, angles)
    return np.array([joint_ratio(lam, tj) for tj in t])


def score_sample(
    sample: Sequence[tuple[MarginParams, DmParams]],
    chi_true: MarginParams,
    psi_true: DmParams,
    period: float,
    rng: np.random.Generator,
    n_angles: int = 20_000,
) -> ScoreReport:
    """Marginal and joint normalized scores at the true ``period``-return levels."""
    d = chi_true.d
    levels = return_level_vec(period, chi_true.sigma, chi_true.xi, chi_true.zeta, chi_true.threshold)
    p0 = 1.0 / period
    marg = np.array([marginal_excess_prob(chi, levels) for chi, _ in sample])
    joint = np.array([joint_functional(chi, psi, levels, sample_angle(psi, rng, n_angles)) for chi, psi in sample])
    true_joint = joint_functional(chi_true, psi_true, levels, sample_angle(psi_true, rng, 20 * n_angles))
    report = ScoreReport()
    for j in range(d):
        report.marginal.append(ql_score(marg[:, j], p0))
        report.joint.append(ql_score(joint[:, j], true_joint[j]))
    return report


def predictive_angular_density(psis: Sequence[DmParams], pair, grid):
    """Pointwise mean and 5%/95% quantiles of the pair-marginal angular density.

    The density is with respect to the first coordinate of the pair on the
    1-simplex.
    """
    grid = np.asarray(grid, dtype=float)
    if len(psis) == 0:
        raise DomainError("empty posterior sample")
    if np.any((grid <= 0) | (grid >= 1)):
        raise DomainError("grid must lie inside (0, 1)")
    i, j = pair
    d = psis[0].d
    w = np.column_stack([grid, 1.0 - grid])
    curves = []
    for psi in psis:
        drop = [m for m in range(d) if m not in (i, j)]
        sub = marginalize(psi, drop) if drop else psi
        if i > j:
            sub = DmParams(sub.weights, sub.centers[:, ::-1], sub.shapes)
        curves.append(dm_density(w, sub))
    curves = np.array(curves)
    return curves.mean(axis=0), np.quantile(curves, 0.05, axis=0), np.quantile(curves, 0.95, axis=0)


def return_level_band(chis: Sequence[MarginParams], station: int, periods):
    """Mean and 5%/95% quantiles of return levels for the given periods (observation units)."""
    periods = np.asarray(periods, dtype=float)
    if len(chis) == 0:
        raise DomainError("empty posterior sample")
    levels = np.array(
        [return_level_vec(periods, c.sigma[station], c.xi[station], c.zeta[station], c.threshold[station]) for c in chis]
    )
    return levels.mean(axis=0), np.quantile(levels, 0.05, axis=0), np.quantile(levels, 0.95, axis=0)


def functional_values(sample, functional: Callable) -> np.ndarray:
    return np.array([functional(theta) for theta in sample], dtype=float)
