"""Metropolis-within-Gibbs sampler for the augmented posterior.

The state holds the margins ``chi``, the Dirichlet mixture ``psi``, the
latent censored coordinates of above-threshold records and one
augmentation process per exponential term (the threshold region and each
overlap block). Move types: marginal block update, Gibbs sweep of the
latent coordinates, refresh of the augmentation processes, fixed-dimension
dependence updates and birth/death of mixture components.

The mean constraint on ``psi`` is maintained by treating the last
component as a slave: ``mu_k = (center - sum_{m<k} p_m mu_m) / p_k``.
"""
from __future__ import annotations

import math
import pickle
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from .augmentation import (
    AboveGroup,
    AugProcess,
    LatentAbove,
    gibbs_sweep_z_above,
    group_log_density,
    initial_latent,
    log_process_density,
    sample_aug_process,
)
from .data_model import EXACT, MISSING, Observation, Position, censor_transform, classify, is_fully_missing, overlap_key
from .dm_core import DmParams, check_moments_constraint
from .errors import DomainError, NumericalError
from .margins import MarginParams, frechet_from_log_tail, log_jacobian_vec, log_tail_ratio

MOVES = ("marginal", "z_above", "z_prime", "dependence", "rj")


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class PriorConfig:
    lambda_geo: float = 4.0
    k_max: int = 10
    nu_mean_log: float = 3.0
    nu_sd_log: float = 2.0
    xi_mean: float = 0.0
    xi_sd: float = 1.0
    log_scale_mean: float = 5.0
    log_scale_sd: float = 5.0

    def __post_init__(self):
        if not self.lambda_geo > 1:
            raise DomainError("lambda_geo must exceed 1")
        if self.k_max < 1:
            raise DomainError("k_max must be at least 1")
        if not (self.nu_sd_log > 0 and self.xi_sd > 0 and self.log_scale_sd > 0):
            raise DomainError("prior standard deviations must be positive")

    def log_prior_k(self, k: int) -> float:
        """Unnormalized truncated geometric log-probability."""
        if not 1 <= k <= self.k_max:
            return -np.inf
        return (k - 1) * math.log1p(-1.0 / self.lambda_geo)

    def k_probabilities(self) -> np.ndarray:
        p = np.exp([self.log_prior_k(k) for k in range(1, self.k_max + 1)])
        return p / p.sum()

    def log_prior_nu(self, nu) -> np.ndarray:
        nu = np.asarray(nu, dtype=float)
        z = (np.log(nu) - self.nu_mean_log) / self.nu_sd_log
        return -0.5 * z**2 - np.log(nu * self.nu_sd_log * np.sqrt(2 * np.pi))

    def log_prior_chi(self, chi: MarginParams) -> float:
        zs = (chi.log_scale - self.log_scale_mean) / self.log_scale_sd
        zx = (np.atleast_1d(chi.shape) - self.xi_mean) / self.xi_sd
        return float(-0.5 * np.sum(zs**2) - 0.5 * np.sum(zx**2))

    def log_prior_psi(self, psi: DmParams) -> float:
        """Log prior of ``psi`` with respect to its free coordinates.

        Weights are Dirichlet(1, ..., 1), free centers uniform, shapes
        log-normal, restricted to a valid slave center and renormalized by
        the probability of that event.
        """
        k = psi.k
        lp = self.log_prior_k(k)
        if not np.isfinite(lp) or not check_moments_constraint(psi):
            return -np.inf
        lp += math.lgamma(k) + (k - 1) * math.lgamma(psi.d) - log_valid_probability(psi.d, k)
        return float(lp + np.sum(self.log_prior_nu(psi.shapes)))


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 10_000
    burn_in: int | None = None
    thin: int = 10
    tau: float = 50.0
    delta: float = 0.5
    epsilon: float = 0.1
    move_probs: tuple = (0.2, 0.3, 0.1, 0.3, 0.1)
    shape_steps: tuple = (0.05, 0.3, 1.5)
    weight_steps: tuple = (0.1, 0.5, 2.0)
    likelihood: bool = True
    check_every: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.thin < 1:
            raise DomainError("iterations must be >= 0 and thin >= 1")
        if not 0 < self.epsilon < 0.5:
            raise DomainError("epsilon must lie in (0, 0.5)")
        if not self.delta > 0:
            raise DomainError("delta must be positive")
        if not self.tau > 1:
            raise DomainError("tau must exceed 1")
        p = np.asarray(self.move_probs, dtype=float)
        if p.shape != (len(MOVES),) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise DomainError(f"move probabilities must be {len(MOVES)} non-negative numbers summing to 1")

    @property
    def burn(self) -> int:
        return self.iterations // 5 if self.burn_in is None else self.burn_in

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "tau": self.tau,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "move_probs": list(self.move_probs),
            "shape_steps": list(self.shape_steps),
            "weight_steps": list(self.weight_steps),
            "likelihood": self.likelihood,
            "check_every": self.check_every,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "McmcConfig":
        data = dict(data)
        if isinstance(data.get("move_probs"), dict):
            data["move_probs"] = tuple(data["move_probs"][m] for m in MOVES)
        for key in ("move_probs", "shape_steps", "weight_steps"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@lru_cache(maxsize=None)
def log_valid_probability(d: int, k: int, n_draws: int = 2**20, seed: int = 12345) -> float:
    """``log P(slave center valid)`` when weights are Dirichlet(1) and free centers uniform.

    Monte-Carlo with a fixed seed, so the value is a deterministic constant.
    """
    if k == 1:
        return 0.0
    rng = np.random.default_rng([seed, d, k])
    hits = 0
    chunk = 2**16
    for _ in range(n_draws // chunk):
        p = rng.dirichlet(np.ones(k), chunk)
        mu = rng.dirichlet(np.ones(d), (chunk, k - 1))
        partial = np.einsum("nm,nmj->nj", p[:, :-1], mu)
        hits += np.count_nonzero(np.all(partial < 1.0 / d, axis=1))
    if hits == 0:
        raise NumericalError(f"no valid mixture found for d={d}, k={k}")
    return float(np.log(hits / n_draws))


# ----------------------------------------------------------- slave components


def slave_center(weights, centers) -> np.ndarray | None:
    """Center of the last component that restores the mean constraint; ``None`` if invalid."""
    d = centers.shape[1]
    rest = weights[:-1] @ centers[:-1] if len(weights) > 1 else np.zeros(d)
    mu = (1.0 / d - rest) / weights[-1]
    if np.any(~(mu > 0)):
        return None
    return mu / mu.sum()


def with_slave(weights, centers, shapes) -> DmParams | None:
    centers = np.array(centers, dtype=float)
    mu = slave_center(np.asarray(weights), centers)
    if mu is None:
        return None
    centers[-1] = mu
    weights = np.asarray(weights, dtype=float)
    shapes = np.asarray(shapes, dtype=float)
    if not (weights.min() > 0 and shapes.min() > 0 and np.isfinite(shapes).all()):
        return None
    return DmParams.trusted(weights, centers, shapes)


def _log_dirichlet(x, alpha) -> float:
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1) * np.log(x)))


def birth(psi: DmParams, position: int, beta: float, center, shape) -> DmParams | None:
    """Insert a component at non-slave ``position`` with weight ``beta``; recompute the slave."""
    k = psi.k
    if not 0 <= position < k:
        raise DomainError("birth position must index a non-slave slot")
    w = np.insert((1.0 - beta) * psi.weights, position, beta)
    c = np.insert(psi.centers, position, center, axis=0)
    s = np.insert(psi.shapes, position, shape)
    return with_slave(w, c, s)


def death(psi: DmParams, position: int) -> DmParams | None:
    """Remove non-slave component ``position``; renormalize and recompute the slave."""
    if not 0 <= position < psi.k - 1:
        raise DomainError("only non-slave components can be removed")
    w = np.delete(psi.weights, position)
    w = w / w.sum()
    return with_slave(w, np.delete(psi.centers, position, axis=0), np.delete(psi.shapes, position))


# ------------------------------------------------------------- prepared data


@dataclass
class GroupData:
    """Raw values of above-threshold records sharing a missing pattern."""

    keep: np.ndarray
    rows: np.ndarray
    exact: np.ndarray  # (n, r) bool
    y: np.ndarray  # exact values, nan elsewhere
    lo_raw: np.ndarray  # censoring bounds on the data scale, nan for exact entries
    hi_raw: np.ndarray


@dataclass
class BlockData:
    key: np.ndarray  # data-scale bound vector
    count: int
    chi_dependent: bool


@dataclass
class PreparedData:
    d: int
    zeta: np.ndarray
    threshold: np.ndarray
    n_obs: int
    n_above: int
    n_below: int
    groups: list
    blocks: list

    @property
    def n_det(self) -> int:
        return self.n_above + self.n_below


def prepare_data(observations: Sequence[Observation], zeta, threshold) -> PreparedData:
    """Classify records and collect what the sampler needs.

    Overlap blocks with no finite bound carry no information and are dropped.
    """
    zeta = np.asarray(zeta, dtype=float)
    v = np.asarray(threshold, dtype=float)
    d = len(v)
    # any margins will do to read off the censoring kinds, which do not depend on them
    chi0 = MarginParams(np.zeros(d), 0.0, zeta, v)
    n_obs = n_above = n_below = 0
    patterns: dict[tuple, list] = {}
    counts: dict[tuple, int] = {}
    for o in observations:
        if o.d != d:
            raise DomainError(f"day {o.day}: expected {d} stations")
        if is_fully_missing(o):
            continue
        n_obs += 1
        pos = classify(o, v)
        if pos is Position.BELOW:
            n_below += 1
        elif pos is Position.OVERLAPPING:
            key = overlap_key(o, v)
            counts[key] = counts.get(key, 0) + 1
        else:
            n_above += 1
            kind = censor_transform(o, chi0).kind
            keep = tuple(np.flatnonzero(kind != MISSING))
            exact = kind == EXACT
            lo = np.where(o.kind == EXACT, o.value, o.lower)
            hi = np.where(o.kind == EXACT, o.value, o.upper)
            patterns.setdefault(keep, []).append((o.day, exact, np.where(exact, o.value, np.nan), np.where(exact, np.nan, lo), np.where(exact, np.nan, hi)))
    groups = []
    for keep, recs in patterns.items():
        kp = np.array(keep, dtype=int)
        groups.append(
            GroupData(
                kp,
                np.array([r[0] for r in recs]),
                np.array([r[1][kp] for r in recs]),
                np.array([r[2][kp] for r in recs]),
                np.array([r[3][kp] for r in recs]),
                np.array([r[4][kp] for r in recs]),
            )
        )
    blocks = []
    for key, n in counts.items():
        k = np.array(key)
        if np.all(np.isinf(k)):
            continue
        blocks.append(BlockData(k, n, bool(np.any(np.isfinite(k) & (k != v)))))
    return PreparedData(d, zeta, v, n_obs, n_above, n_below, groups, blocks)


def _frechet(y, sigma, xi, zeta, v):
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        return frechet_from_log_tail(log_tail_ratio(y, sigma, xi, v), zeta)


def standardize_group(g: GroupData, chi: MarginParams):
    """Standardized exact values, latent bounds and per-record log Jacobians under ``chi``."""
    kp = g.keep
    sig, xi, ze, v, u = chi.sigma[kp], chi.xi[kp], chi.zeta[kp], chi.threshold[kp], chi.u[kp]
    x = np.where(g.exact, _frechet(np.where(g.exact, g.y, v), sig, xi, ze, v), np.nan)
    with np.errstate(invalid="ignore"):
        lo_ok = g.lo_raw >= v
        hi_inf = np.isinf(g.hi_raw)
        hi_low = g.hi_raw < v
    lower = np.where(lo_ok, _frechet(np.where(lo_ok, g.lo_raw, v), sig, xi, ze, v), 0.0)
    hi_ok = ~(hi_inf | hi_low | np.isnan(g.hi_raw))
    upper = np.where(hi_inf, np.inf, np.where(hi_low, u, _frechet(np.where(hi_ok, g.hi_raw, v), sig, xi, ze, v)))
    lower = np.where(g.exact, x, lower)
    upper = np.where(g.exact, x, upper)
    with np.errstate(invalid="ignore", divide="ignore"):
        lj = log_jacobian_vec(np.where(g.exact, g.y, v), sig, xi, ze, v)
    logjac = np.where(g.exact, lj, 0.0).sum(axis=1)
    return x, lower, upper, logjac


def block_bounds(b: BlockData, chi: MarginParams) -> np.ndarray:
    v = chi.threshold
    at_v = b.key == v
    fin = np.isfinite(b.key) & ~at_v
    t = _frechet(np.where(fin, b.key, v), chi.sigma, chi.xi, chi.zeta, v)
    return np.where(at_v, chi.u, np.where(fin, t, np.inf))


# --------------------------------------------------------------------- state


@dataclass
class ChainState:
    chi: MarginParams
    psi: DmParams
    latent: LatentAbove
    logjac: list  # per group, (n,) arrays
    processes: list  # AugProcess or None (base first, then blocks)
    iteration: int = 0
    accepted: dict = field(default_factory=lambda: {m: 0 for m in MOVES})
    proposed: dict = field(default_factory=lambda: {m: 0 for m in MOVES})
    # cached pieces of the log posterior
    lp_chi: float = 0.0
    lp_psi: float = 0.0
    ll_above: float = 0.0
    _proc_density: float | None = None

    @property
    def total_hits(self) -> int:
        return sum(p.hits for p in self.processes if p is not None)

    def log_phi(self, tau: float) -> float:
        return self.total_hits * np.log1p(-1.0 / tau)

    def process_density(self) -> float:
        if self._proc_density is None:
            self._proc_density = sum(log_process_density(p, self.psi) for p in self.processes if p is not None)
        return self._proc_density

    def log_post(self, tau: float, likelihood: bool = True) -> float:
        if not likelihood:
            return self.lp_chi + self.lp_psi
        return self.lp_chi + self.lp_psi + self.ll_above + float(np.sum([lj.sum() for lj in self.logjac])) + self.log_phi(tau) + self.process_density()


def above_loglik(latent: LatentAbove, psi: DmParams) -> float:
    return float(sum(group_log_density(g, psi, latent.d).sum() for g in latent.groups))


def _sample_processes(data: PreparedData, chi: MarginParams, psi: DmParams, tau: float, rng) -> list:
    procs = [sample_aug_process(chi.u, data.n_det, psi, tau, rng) if data.n_det > 0 else None]
    for b in data.blocks:
        procs.append(sample_aug_process(block_bounds(b, chi), b.count, psi, tau, rng))
    return procs


def init_state(
    data: PreparedData,
    chi: MarginParams,
    psi: DmParams,
    priors: PriorConfig,
    config: McmcConfig,
    rng: np.random.Generator,
) -> ChainState:
    if psi.d != data.d or chi.d != data.d:
        raise DomainError("parameter dimensions do not match the data")
    groups, logjac = [], []
    if config.likelihood:
        for g in data.groups:
            x, lower, upper, lj = standardize_group(g, chi)
            cens = ~g.exact
            xbar = np.where(cens, initial_latent(lower, upper), x)
            groups.append(AboveGroup(g.keep, g.rows, xbar, cens, lower, upper))
            logjac.append(lj)
    latent = LatentAbove(groups, data.d)
    procs = _sample_processes(data, chi, psi, config.tau, rng) if config.likelihood else []
    state = ChainState(chi, psi, latent, logjac, procs)
    state.lp_chi = priors.log_prior_chi(chi)
    state.lp_psi = priors.log_prior_psi(psi)
    state.ll_above = above_loglik(latent, psi) if config.likelihood else 0.0
    lp = state.log_post(config.tau, config.likelihood)
    if not np.isfinite(lp):
        raise NumericalError(f"non-finite log posterior at the initial state ({lp})")
    return state


def log_augmented_posterior(state: ChainState, data: PreparedData, priors: PriorConfig, tau: float) -> float:
    """Full log augmented posterior recomputed from scratch (no cached pieces).

    Prior, completed exponent densities and Jacobians of above-threshold
    records, hit-count weights and the Poisson densities of the
    augmentation processes. ``-inf`` for states outside the support.
    """
    chi, psi = state.chi, state.psi
    total = priors.log_prior_chi(chi) + priors.log_prior_psi(psi)
    if not np.isfinite(total):
        return -np.inf
    log_keep = np.log1p(-1.0 / tau)
    for g, lg in zip(data.groups, state.latent.groups):
        x, lower, upper, lj = standardize_group(g, chi)
        xbar = np.where(g.exact, x, lg.xbar)
        if np.any((xbar < lower) | (xbar > upper)):
            return -np.inf
        probe = AboveGroup(g.keep, g.rows, xbar, ~g.exact, lower, upper)
        total += float(group_log_density(probe, psi, data.d).sum() + lj.sum())
    bounds = ([chi.u] if data.n_det > 0 else [None]) + [block_bounds(b, chi) for b in data.blocks]
    counts = [data.n_det] + [b.count for b in data.blocks]
    for proc, b, n in zip(state.processes, bounds, counts):
        if proc is None:
            continue
        fresh = AugProcess(b, float(n), tau, proc.radii, proc.angles)
        fresh.hits = fresh.count_hits()
        total += log_process_density(fresh, psi) + fresh.hits * log_keep
    return float(total)


# --------------------------------------------------------------------- moves


def _accept(log_alpha: float, rng) -> bool:
    return bool(np.log(rng.random()) < log_alpha)


def hit_log_ratio(new_hits: int, old_hits: int, tau: float) -> float:
    """``log (1 - 1/tau) ** (new_hits - old_hits)``."""
    return (new_hits - old_hits) * np.log1p(-1.0 / tau)


def marginal_proposal(state: ChainState, data: PreparedData, priors: PriorConfig, config: McmcConfig, cand: MarginParams, rng):
    """Log acceptance ratio of moving the margins to ``cand``, and the pieces to commit.

    Latent coordinates are kept; a latent value falling outside its new
    censoring box gives ``-inf``. The augmentation processes of overlap
    blocks whose bounds depend on ``chi`` are redrawn from their exact law
    under ``cand`` (their densities cancel, leaving the hit-count factor);
    the other processes are untouched.
    """
    lp_chi = priors.log_prior_chi(cand)
    if not config.likelihood:
        return lp_chi - state.lp_chi, (lp_chi, None, None, None, {})
    new_groups, new_logjac = [], []
    for g, lg in zip(data.groups, state.latent.groups):
        x, lower, upper, lj = standardize_group(g, cand)
        if np.any(~np.isfinite(lj)):
            return -np.inf, None
        xbar = np.where(g.exact, x, lg.xbar)
        if np.any(~((xbar >= lower) & (xbar <= upper))):
            return -np.inf, None
        new_groups.append(AboveGroup(g.keep, g.rows, xbar, lg.censored, lower, upper))
        new_logjac.append(lj)
    new_latent = LatentAbove(new_groups, data.d)
    ll = above_loglik(new_latent, state.psi)
    log_alpha = lp_chi - state.lp_chi + ll - state.ll_above
    log_alpha += sum(lj.sum() for lj in new_logjac) - sum(lj.sum() for lj in state.logjac)
    if not np.isfinite(log_alpha):
        return -np.inf, None
    changed = {}
    for i, b in enumerate(data.blocks):
        if not b.chi_dependent:
            continue
        nb = block_bounds(b, cand)
        if np.any(~(nb > 0)):
            return -np.inf, None
        proc = sample_aug_process(nb, b.count, state.psi, config.tau, rng)
        log_alpha += hit_log_ratio(proc.hits, state.processes[i + 1].hits, config.tau)
        changed[i + 1] = proc
    return float(log_alpha), (lp_chi, new_latent, new_logjac, ll, changed)


def marginal_move(state: ChainState, data: PreparedData, priors: PriorConfig, config: McmcConfig, prop_sqrt, rng) -> bool:
    """Block random-walk update of ``chi`` with covariance ``prop_sqrt @ prop_sqrt.T``."""
    step = prop_sqrt @ rng.standard_normal(prop_sqrt.shape[1])
    try:
        cand = state.chi.with_vector(state.chi.vector() + step)
    except DomainError:
        return False
    log_alpha, payload = marginal_proposal(state, data, priors, config, cand, rng)
    if payload is None or not _accept(log_alpha, rng):
        return False
    lp_chi, new_latent, new_logjac, ll, changed = payload
    state.chi, state.lp_chi = cand, lp_chi
    if new_latent is None:
        return True
    state.latent, state.logjac, state.ll_above = new_latent, new_logjac, ll
    for i, proc in changed.items():
        state.processes[i] = proc
    if changed:
        state._proc_density = None
    return True


def z_above_move(state: ChainState, rng) -> bool:
    gibbs_sweep_z_above(state.latent, state.psi, rng)
    state.ll_above = above_loglik(state.latent, state.psi)
    return True


def z_prime_move(state: ChainState, data: PreparedData, config: McmcConfig, rng) -> bool:
    """Independence proposal of all augmentation processes from their exact law."""
    procs = _sample_processes(data, state.chi, state.psi, config.tau, rng)
    log_alpha = hit_log_ratio(sum(p.hits for p in procs if p is not None), state.total_hits, config.tau)
    if _accept(log_alpha, rng):
        state.processes = procs
        state._proc_density = None
        return True
    return False


def psi_log_ratio(state, priors, config, cand: DmParams | None, log_q_ratio: float):
    """Log ratio of a dependence proposal before the process refresh.

    Returns ``(log_alpha, lp_psi, ll_above)``; ``log_alpha = -inf`` for an
    invalid candidate.
    """
    if cand is None:
        return -np.inf, None, None
    lp_psi = priors.log_prior_psi(cand)
    if not np.isfinite(lp_psi):
        return -np.inf, None, None
    log_alpha = lp_psi - state.lp_psi + log_q_ratio
    ll = above_loglik(state.latent, cand) if config.likelihood else 0.0
    log_alpha += ll - state.ll_above
    return (float(log_alpha) if np.isfinite(log_alpha) else -np.inf), lp_psi, ll


def _try_psi(state, data, priors, config, cand: DmParams | None, log_q_ratio: float, rng) -> bool:
    """Accept or reject ``cand`` jointly with a fresh draw of the augmentation processes."""
    log_alpha, lp_psi, ll = psi_log_ratio(state, priors, config, cand, log_q_ratio)
    if not np.isfinite(log_alpha):
        return False
    procs = state.processes
    if config.likelihood:
        procs = _sample_processes(data, state.chi, cand, config.tau, rng)
        log_alpha += hit_log_ratio(sum(p.hits for p in procs if p is not None), state.total_hits, config.tau)
    if not _accept(log_alpha, rng):
        return False
    state.psi, state.lp_psi, state.ll_above = cand, lp_psi, ll
    if config.likelihood:
        state.processes = procs
        state._proc_density = None
    return True


def dependence_move(state: ChainState, data: PreparedData, priors: PriorConfig, config: McmcConfig, rng) -> bool:
    """One of: center, shape or weight update, followed by a process refresh."""
    psi = state.psi
    k, d = psi.k, psi.d
    kinds = ["shape"] if k == 1 else ["center", "shape", "weight"]
    kind = kinds[rng.integers(len(kinds))]
    if kind == "center":
        m = rng.integers(k - 1)
        eps = config.epsilon
        conc = d / eps
        gamma = (1 - eps) * psi.centers[m] + eps / d
        mu = rng.dirichlet(conc * gamma)
        if np.any(mu <= 0):
            return False
        back = (1 - eps) * mu + eps / d
        log_q = _log_dirichlet(psi.centers[m], conc * back) - _log_dirichlet(mu, conc * gamma)
        centers = psi.centers.copy()
        centers[m] = mu
        cand = with_slave(psi.weights, centers, psi.shapes)
        return _try_psi(state, data, priors, config, cand, log_q, rng)
    if kind == "shape":
        m = rng.integers(k)
        s = config.shape_steps[rng.integers(len(config.shape_steps))]
        log_nu = np.log(psi.shapes[m]) + s * rng.standard_normal()
        shapes = psi.shapes.copy()
        shapes[m] = np.exp(log_nu)
        if not 0 < shapes[m] < np.inf:
            return False
        # random walk on log(nu): proposal ratio nu* / nu
        log_q = log_nu - np.log(psi.shapes[m])
        cand = DmParams.trusted(psi.weights, psi.centers, shapes)
        return _try_psi(state, data, priors, config, cand, log_q, rng)
    s = config.weight_steps[rng.integers(len(config.weight_steps))]
    eta = np.log(psi.weights[:-1] / psi.weights[-1]) + s * rng.standard_normal(k - 1)
    full = np.concatenate([eta, [0.0]])
    w = np.exp(full - full.max())
    w = w / w.sum()
    if np.any(w <= 0):
        return False
    # symmetric in the log-ratio coordinates; Jacobian to the free weights is prod(p)
    log_q = np.sum(np.log(w)) - np.sum(np.log(psi.weights))
    cand = with_slave(w, psi.centers, psi.shapes)
    return _try_psi(state, data, priors, config, cand, log_q, rng)


def reversible_jump_move(state: ChainState, data: PreparedData, priors: PriorConfig, config: McmcConfig, rng) -> bool:
    """Birth or death of a non-slave component (probability 1/2 each)."""
    psi = state.psi
    k, d = psi.k, psi.d
    log_geo = np.log1p(-1.0 / priors.lambda_geo)
    if rng.random() < 0.5:
        if k >= priors.k_max:
            return False
        pos = rng.integers(k)
        beta = rng.beta(1.0, k)
        mu = rng.dirichlet(np.ones(d))
        nu = np.exp(priors.nu_mean_log + priors.nu_sd_log * rng.standard_normal())
        if not (0 < beta < 1) or np.any(mu <= 0):
            return False
        cand = birth(psi, pos, beta, mu, nu)
        if cand is None:
            return False
        # proposal density of (beta, mu, nu) is k (1-beta)^(k-1) * Gamma(d) * LN(nu);
        # the weight Jacobian is (1-beta)^(k-1); slot choices cancel
        log_q = -(np.log(k) + gammaln(d) + priors.log_prior_nu(nu))
        return _try_psi(state, data, priors, config, cand, float(log_q), rng)
    if k <= 1:
        return False
    pos = rng.integers(k - 1)
    beta = psi.weights[pos]
    mu = psi.centers[pos]
    nu = psi.shapes[pos]
    cand = death(psi, pos)
    if cand is None:
        return False
    km = k - 1
    log_q = np.log(km) + gammaln(d) + priors.log_prior_nu(nu)
    return _try_psi(state, data, priors, config, cand, float(log_q), rng)


# ----------------------------------------------------------------- the chain


def proposal_sqrt(cov) -> np.ndarray:
    """Symmetric square root of a covariance (positive semi-definite allowed)."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if np.any(vals < -1e-10 * max(1.0, np.abs(vals).max())):
        raise DomainError("proposal covariance is not positive semi-definite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


class Chain:
    """One Markov chain: state, random stream and move dispatch."""

    def __init__(self, data, priors: PriorConfig, config: McmcConfig, chi, psi, marginal_cov, rng):
        self.data = data
        self.priors = priors
        self.config = config
        self.rng = rng
        self.prop_sqrt = proposal_sqrt(config.delta * np.asarray(marginal_cov, dtype=float))
        if self.prop_sqrt.shape[0] != len(chi.vector()):
            raise DomainError("marginal covariance does not match the number of marginal parameters")
        self.state = init_state(data, chi, psi, priors, config, rng)
        self._cum = np.cumsum(config.move_probs)

    def step(self) -> str:
        st, cfg, rng = self.state, self.config, self.rng
        move = MOVES[min(int(np.searchsorted(self._cum, rng.random() * self._cum[-1], side="right")), len(MOVES) - 1)]
        if move == "marginal":
            ok = marginal_move(st, self.data, self.priors, cfg, self.prop_sqrt, rng)
        elif move == "z_above":
            ok = z_above_move(st, rng) if cfg.likelihood else True
        elif move == "z_prime":
            ok = z_prime_move(st, self.data, cfg, rng) if cfg.likelihood else True
        elif move == "dependence":
            ok = dependence_move(st, self.data, self.priors, cfg, rng)
        else:
            ok = reversible_jump_move(st, self.data, self.priors, cfg, rng)
        st.proposed[move] += 1
        st.accepted[move] += int(ok)
        st.iteration += 1
        if cfg.check_every and st.iteration % cfg.check_every == 0:
            self.check_cache()
        return move

    def check_cache(self, tol: float = 1e-8):
        if not self.config.likelihood:
            return
        cached = self.state.log_post(self.config.tau)
        fresh = log_augmented_posterior(self.state, self.data, self.priors, self.config.tau)
        if not abs(cached - fresh) <= tol * max(1.0, abs(fresh)):
            raise NumericalError(f"cached log posterior {cached} drifted from {fresh}")

    def record(self) -> dict:
        st = self.state
        return {
            "iteration": st.iteration,
            "k": st.psi.k,
            "weights": st.psi.weights.tolist(),
            "centers": st.psi.centers.tolist(),
            "shapes": st.psi.shapes.tolist(),
            "log_scale": st.chi.log_scale.tolist(),
            "shape": np.atleast_1d(st.chi.shape).tolist(),
            "hits": [p.hits if p is not None else 0 for p in st.processes],
            "log_post": float(st.log_post(self.config.tau, self.config.likelihood)),
            "accepted": dict(st.accepted),
            "proposed": dict(st.proposed),
        }

    def snapshot(self) -> bytes:
        """Serialized state and random stream, for checkpoints."""
        return pickle.dumps((self.state, self.rng.bit_generator.state))

    def restore(self, blob: bytes):
        state, rng_state = pickle.loads(blob)
        self.state = state
        self.rng.bit_generator.state = rng_state


def run_chain(chain: Chain, iterations: int | None = None) -> Iterator[dict]:
    """Advance ``chain`` to ``iterations`` total, yielding a record every ``thin`` iterations.

    A fresh chain first yields its initial record.
    """
    total = chain.config.iterations if iterations is None else iterations
    thin = chain.config.thin
    if chain.state.iteration == 0:
        yield chain.record()
    while chain.state.iteration < total:
        chain.step()
        if chain.state.iteration % thin == 0:
            yield chain.record()


def record_params(rec: dict, template: MarginParams) -> tuple[MarginParams, DmParams]:
    """Parameters stored in a chain record."""
    shape = np.array(rec["shape"]) if template.per_station_shape else rec["shape"][0]
    chi = MarginParams(np.array(rec["log_scale"]), shape, template.zeta, template.threshold, template.per_station_shape)
    psi = DmParams(np.array(rec["weights"]), np.array(rec["centers"]), np.array(rec["shapes"]))
    return chi, psi
