"""Preliminary fit of the margins under independence.

Each station contributes a censored generalized-Pareto likelihood; the
maximizer seeds the chains and the inverse Hessian shapes the random-walk
proposal of the marginal parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .data_model import EXACT, INTERVAL, MISSING, RIGHT, Observation
from .errors import DomainError
from .margins import MarginParams, log_tail_ratio

_INVALID = 1e12


@dataclass
class _StationData:
    exact: np.ndarray  # exact values above threshold
    cens_lo: np.ndarray  # censored above threshold: [lo, hi]
    cens_hi: np.ndarray
    straddle_hi: np.ndarray  # intervals reaching across the threshold


@dataclass
class IndependentFit:
    chi: MarginParams
    hessian: np.ndarray
    cov: np.ndarray
    converged: bool
    neg_loglik: float


def _station_data(observations: Sequence[Observation], j: int, v: float) -> _StationData:
    ex, lo, hi, st = [], [], [], []
    for o in observations:
        k = o.kind[j]
        if k == MISSING:
            continue
        if k == EXACT:
            if o.value[j] >= v:
                ex.append(o.value[j])
        elif k in (RIGHT, INTERVAL):
            if o.lower[j] >= v:
                lo.append(o.lower[j])
                hi.append(o.upper[j])
            elif o.upper[j] > v and np.isfinite(o.upper[j]):
                st.append(o.upper[j])
    return _StationData(np.array(ex), np.array(lo), np.array(hi), np.array(st))


def _station_loglik(d: _StationData, log_sigma, xi, zeta, v) -> float:
    sigma = np.exp(log_sigma)
    ls = log_tail_ratio(d.exact, sigma, xi, v)
    if np.any(~np.isfinite(ls)):
        return -np.inf
    out = d.exact.size * (np.log(zeta) - log_sigma) + (1.0 + xi) * ls.sum()
    if d.cens_lo.size:
        s_lo = np.exp(log_tail_ratio(d.cens_lo, sigma, xi, v))
        s_hi = np.where(np.isinf(d.cens_hi), 0.0, np.exp(log_tail_ratio(np.where(np.isinf(d.cens_hi), v, d.cens_hi), sigma, xi, v)))
        with np.errstate(divide="ignore"):
            out += np.sum(np.log(zeta * (s_lo - s_hi)))
    if d.straddle_hi.size:
        s = np.exp(log_tail_ratio(d.straddle_hi, sigma, xi, v))
        out += np.sum(np.log1p(-zeta * s))
    return float(out)


def independent_loglik(chi: MarginParams, observations: Sequence[Observation]) -> float:
    """Censored log-likelihood of the margins, stations treated as independent."""
    return sum(
        _station_loglik(_station_data(observations, j, chi.threshold[j]), chi.log_scale[j], chi.xi[j], chi.zeta[j], chi.threshold[j])
        for j in range(chi.d)
    )


def _hessian(f, x, step=1e-4):
    """Central-difference Hessian."""
    n = len(x)
    h = step * np.maximum(1.0, np.abs(x))
    out = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            ea = np.zeros(n)
            eb = np.zeros(n)
            ea[a], eb[b] = h[a], h[b]
            val = (f(x + ea + eb) - f(x + ea - eb) - f(x - ea + eb) + f(x - ea - eb)) / (4 * h[a] * h[b])
            out[a, b] = out[b, a] = val
    return out


def fit_independent(
    observations: Sequence[Observation], zeta, threshold, per_station_shape: bool = False
) -> IndependentFit:
    """Maximize the independent-margins likelihood (BFGS) and return the Hessian.

    The Hessian is that of the negative log-likelihood; when it is not
    positive definite the covariance falls back to a diagonal built from the
    absolute diagonal entries.
    """
    zeta = np.asarray(zeta, dtype=float)
    threshold = np.asarray(threshold, dtype=float)
    d = len(threshold)
    stations = [_station_data(observations, j, threshold[j]) for j in range(d)]
    if all(s.exact.size == 0 for s in stations):
        raise DomainError("no exact excess at any station: the margins cannot be fitted")
    start_ls = []
    for j, s in enumerate(stations):
        exc = s.exact - threshold[j]
        start_ls.append(np.log(max(exc.mean(), 1e-3)) if exc.size else 0.0)
    n_xi = d if per_station_shape else 1
    x0 = np.concatenate([start_ls, np.full(n_xi, 0.1)])

    def nll(x):
        xi = x[d:] if per_station_shape else np.full(d, x[d])
        total = 0.0
        for j in range(d):
            ll = _station_loglik(stations[j], x[j], xi[j], zeta[j], threshold[j])
            if not np.isfinite(ll):
                return _INVALID
            total += ll
        return -total

    res = minimize(nll, x0, method="BFGS")
    x = res.x
    hess = _hessian(nll, x)
    try:
        np.linalg.cholesky(hess)
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        cov = np.diag(1.0 / np.maximum(np.abs(np.diag(hess)), 1e-8))
    cov = 0.5 * (cov + cov.T)
    shape = x[d:] if per_station_shape else x[d]
    chi = MarginParams(x[:d], shape, zeta, threshold, per_station_shape)
    return IndependentFit(chi, hess, cov, bool(res.success), float(res.fun))
