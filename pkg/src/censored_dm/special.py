"""Log-space regularized incomplete Beta functions and truncated Beta sampling.

``scipy.special.betainc`` is accurate but underflows to zero deep in the
tails, which is exactly where the truncated-Beta weights of the latent
coordinates live (shapes of order 100, truncation points of order 1e-3).
Those cases switch to the continued fraction evaluated in log space.

Points near 1 lose precision when written as ``x``; every routine therefore
takes the pair ``(x, 1 - x)`` computed by the caller.
"""
from __future__ import annotations

import numpy as np
from scipy.special import betainc, betaincinv, betaln

from .errors import NumericalError

_TINY = 1e-280
_CF_MAX_ITER = 500
_CF_TOL = 1e-15


def _log_cf(a, b, x):
    """Log of the continued fraction in ``I_x(a,b) = x^a (1-x)^b / (a B(a,b)) * cf``.

    Modified Lentz iteration, vectorized; converges fast for ``x < (a+1)/(a+b+2)``.
    """
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    dd = 1.0 - qab * x / qap
    dd = np.where(np.abs(dd) < 1e-300, 1e-300, dd)
    dd = 1.0 / dd
    h = dd.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        dd = 1.0 + aa * dd
        dd = np.where(np.abs(dd) < 1e-300, 1e-300, dd)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < 1e-300, 1e-300, c)
        dd = 1.0 / dd
        h = np.where(active, h * dd * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        dd = 1.0 + aa * dd
        dd = np.where(np.abs(dd) < 1e-300, 1e-300, dd)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < 1e-300, 1e-300, c)
        dd = 1.0 / dd
        delta = dd * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > _CF_TOL
        if not active.any():
            break
    return np.log(h)


def log_betainc(a, b, x, xc=None):
    """``log I_x(a, b)`` (regularized lower incomplete Beta), robust to underflow.

    ``xc`` is ``1 - x`` if known more accurately than by subtraction.
    """
    a, b, x = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (a, b, x)))
    xc = 1.0 - x if xc is None else np.broadcast_to(np.asarray(xc, dtype=float), x.shape)
    with np.errstate(divide="ignore"):
        out = np.log(betainc(a, b, x))
    bad = (out < np.log(_TINY)) & (x > 0)
    if np.any(bad):
        ab, bb, xb, xcb = a[bad], b[bad], x[bad], xc[bad]
        # underflow only happens in the lower tail, where the direct fraction converges
        out = np.array(out, copy=True)
        out[bad] = (
            ab * np.log(xb) + bb * np.log(xcb) - np.log(ab) - betaln(ab, bb) + _log_cf(ab, bb, xb)
        )
    return out


def log_betaincc(a, b, x, xc=None):
    """``log (1 - I_x(a, b))`` via the reflection ``I_{1-x}(b, a)``."""
    x = np.asarray(x, dtype=float)
    xc = 1.0 - x if xc is None else xc
    return log_betainc(b, a, xc, x)


def _log_diff(hi, lo):
    """``log(exp(hi) - exp(lo))`` for ``hi >= lo``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hi + np.log(-np.expm1(lo - hi))
    return np.where(lo == -np.inf, hi, np.where(hi <= lo, -np.inf, out))


def log_beta_mass(a, b, lo, hi, lo_c=None, hi_c=None):
    """Log probability that a Beta(a, b) variable falls in ``[lo, hi]``.

    Uses lower-tail values when the interval sits left of the median and
    upper-tail values otherwise, so neither side cancels catastrophically.
    """
    lo_c = 1.0 - np.asarray(lo, dtype=float) if lo_c is None else lo_c
    hi_c = 1.0 - np.asarray(hi, dtype=float) if hi_c is None else hi_c
    a, b, lo, hi, lo_c, hi_c = np.broadcast_arrays(
        *(np.asarray(t, dtype=float) for t in (a, b, lo, hi, lo_c, hi_c))
    )
    upper = _use_upper(a, b, lo)
    out = np.empty(a.shape)
    lw = ~upper
    if np.any(lw):
        out[lw] = _log_diff(
            log_betainc(a[lw], b[lw], hi[lw], hi_c[lw]), log_betainc(a[lw], b[lw], lo[lw], lo_c[lw])
        )
    if np.any(upper):
        out[upper] = _log_diff(
            log_betaincc(a[upper], b[upper], lo[upper], lo_c[upper]),
            log_betaincc(a[upper], b[upper], hi[upper], hi_c[upper]),
        )
    return out


def _use_upper(a, b, lo):
    # the interval starts right of the mean: work with upper-tail masses
    return lo > a / (a + b)


def _invert_lower(a, b, log_p, lo, hi):
    """Solve ``log I_x(a, b) = log_p`` for x in ``[lo, hi]`` (arrays).

    Direct ``betaincinv`` when ``p`` is representable; otherwise safeguarded
    Newton iterations on the log scale.
    """
    x = np.empty(a.shape)
    direct = log_p > np.log(_TINY)
    if np.any(direct):
        x[direct] = betaincinv(a[direct], b[direct], np.exp(log_p[direct]))
    tiny = ~direct
    if np.any(tiny):
        x[tiny] = _newton_log(a[tiny], b[tiny], log_p[tiny], lo[tiny], hi[tiny])
    return np.clip(x, lo, hi)


def _newton_log(a, b, log_p, lo, hi):
    lo = lo.copy()
    hi = hi.copy()
    # leading-order tail I_x ~ x^a / (a B(a, b))
    x = np.exp((log_p + np.log(a) + betaln(a, b)) / a)
    x = np.where((x > lo) & (x < hi), x, 0.5 * (lo + hi))
    for _ in range(200):
        f = log_betainc(a, b, x) - log_p
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        logdens = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - betaln(a, b)
        # d/dx log I = density / I
        step = f / np.exp(logdens - (f + log_p))
        xn = x - step
        xn = np.where((xn > lo) & (xn < hi) & np.isfinite(xn), xn, 0.5 * (lo + hi))
        done = np.abs(xn - x) <= 1e-14 * np.abs(x)
        x = xn
        if np.all(done):
            break
    else:
        raise NumericalError(f"truncated Beta inversion failed for a={a}, b={b}, log_p={log_p}")
    return x


def sample_truncated_beta(a, b, lo, hi, rng, lo_c=None, hi_c=None):
    """Inverse-CDF draw from Beta(a, b) restricted to ``[lo, hi]`` (vectorized).

    Returns ``(u, 1 - u)``; the complement is computed directly when the
    draw is in the upper tail so that ``u / (1 - u)`` stays accurate.
    """
    lo_c = 1.0 - np.asarray(lo, dtype=float) if lo_c is None else lo_c
    hi_c = 1.0 - np.asarray(hi, dtype=float) if hi_c is None else hi_c
    a, b, lo, hi, lo_c, hi_c = (
        np.array(t) for t in np.broadcast_arrays(*(np.atleast_1d(np.asarray(t, dtype=float)) for t in (a, b, lo, hi, lo_c, hi_c)))
    )
    v = rng.random(a.shape)
    u = np.empty(a.shape)
    uc = np.empty(a.shape)
    upper = _use_upper(a, b, lo)
    lw = ~upper
    if np.any(lw):
        u[lw], uc[lw] = _sample_lower(a[lw], b[lw], lo[lw], hi[lw], lo_c[lw], hi_c[lw], v[lw])
    if np.any(upper):
        # reflect: 1 - U ~ Beta(b, a) on [1 - hi, 1 - lo]
        uc[upper], u[upper] = _sample_lower(
            b[upper], a[upper], hi_c[upper], lo_c[upper], hi[upper], lo[upper], v[upper]
        )
    point = lo == hi
    u[point], uc[point] = lo[point], lo_c[point]
    return u, uc


def _sample_lower(a, b, lo, hi, lo_c, hi_c, v):
    log_lo = log_betainc(a, b, lo, lo_c)
    log_hi = log_betainc(a, b, hi, hi_c)
    log_mass = _log_diff(log_hi, log_lo)
    if np.any(~np.isfinite(log_mass)):
        bad = ~np.isfinite(log_mass) & (lo < hi)
        if np.any(bad):
            raise NumericalError(
                f"empty truncation interval: a={a[bad]}, b={b[bad]}, lo={lo[bad]}, hi={hi[bad]}"
            )
    with np.errstate(divide="ignore"):
        log_p = np.logaddexp(log_lo, np.log(v) + log_mass)
    log_p = np.minimum(log_p, log_hi)
    x = _invert_lower(a, b, log_p, lo, hi)
    xc = 1.0 - x
    top = log_p > np.log(0.5)
    if np.any(top):
        # right half: invert the reflected law so 1 - x keeps full precision
        q = betainc(b[top], a[top], hi_c[top]) + (1.0 - v[top]) * np.exp(log_mass[top])
        xc_top = np.clip(betaincinv(b[top], a[top], np.minimum(q, 1.0)), hi_c[top], lo_c[top])
        xc[top] = xc_top
        x[top] = 1.0 - xc_top
    # keep exact complements at the interval ends
    xc = np.where(x == hi, hi_c, np.where(x == lo, lo_c, xc))
    return x, xc
