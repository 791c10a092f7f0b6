"""Censored multivariate observations, their position relative to the threshold,
the standardizing censor map, dataset summaries and run-declustering.

Censoring kinds (``kind`` arrays): 0 missing, 1 exact, 2 right-censored
(value above ``lower``, ``upper = inf``), 3 interval or left-censored
(value in ``[lower, upper]``; ``lower = 0`` for left-censoring).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError
from .margins import MarginParams, frechet_from_log_tail, log_tail_ratio

MISSING, EXACT, RIGHT, INTERVAL = 0, 1, 2, 3


class Position(Enum):
    ABOVE = "above"
    OVERLAPPING = "overlapping"
    BELOW = "below"


@dataclass(frozen=True)
class Observation:
    """One day of raw data: per-station kind, value and censoring bounds."""

    day: int
    kind: np.ndarray
    value: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        kind = np.asarray(self.kind, dtype=int)
        value = np.asarray(self.value, dtype=float).copy()
        lower = np.asarray(self.lower, dtype=float).copy()
        upper = np.asarray(self.upper, dtype=float).copy()
        if not (kind.shape == value.shape == lower.shape == upper.shape) or kind.ndim != 1:
            raise DomainError("kind, value, lower and upper must be 1-d arrays of equal length")
        if np.any((kind < 0) | (kind > 3)):
            raise DomainError(f"unknown censoring kind in {kind}")
        ex = kind == EXACT
        if np.any(~np.isfinite(value[ex])):
            raise DomainError(f"day {self.day}: exact component without a finite value")
        cens = (kind == RIGHT) | (kind == INTERVAL)
        if np.any(np.isnan(lower[cens]) | np.isnan(upper[cens]) | (lower[cens] > upper[cens])):
            raise DomainError(f"day {self.day}: censored component needs lower <= upper")
        if np.any(np.isfinite(upper[kind == RIGHT])):
            raise DomainError(f"day {self.day}: right-censored component must have upper = inf")
        value[~ex] = np.nan
        lower[ex], upper[ex] = value[ex], value[ex]
        miss = kind == MISSING
        lower[miss], upper[miss] = np.nan, np.nan
        object.__setattr__(self, "day", int(self.day))
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def d(self) -> int:
        return self.kind.shape[0]

    @classmethod
    def exact(cls, day: int, values) -> "Observation":
        values = np.asarray(values, dtype=float)
        return cls(day, np.ones(len(values), dtype=int), values, values, values)

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return self.day == other.day and all(
            np.array_equal(getattr(self, f), getattr(other, f), equal_nan=True)
            for f in ("kind", "value", "lower", "upper")
        )

    __hash__ = None


@dataclass(frozen=True)
class FrechetObs:
    """Standardized, threshold-censored version of an observation."""

    kind: np.ndarray
    x: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class DatasetSummary:
    n_obs: int = 0
    n_above: int = 0
    n_overlap: int = 0
    n_below: int = 0
    blocks: list = field(default_factory=list)  # (data-scale bound vector, count)
    above_index: list = field(default_factory=list)

    @property
    def n_det(self) -> int:
        return self.n_above + self.n_below

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class Cluster:
    start: int
    end: int
    maxima: Observation


def coordinate_positions(o: Observation, v) -> tuple[np.ndarray, np.ndarray]:
    """Per-station flags ``(determinately above, determinately below)``."""
    v = np.asarray(v, dtype=float)
    k = o.kind
    with np.errstate(invalid="ignore"):
        above = ((k == EXACT) & (o.value > v)) | (((k == RIGHT) | (k == INTERVAL)) & (o.lower >= v))
        below = ((k == EXACT) & (o.value <= v)) | ((k == INTERVAL) & (o.upper <= v))
    return above, below


def classify(o: Observation, v) -> Position:
    """Position of a record relative to the multivariate threshold ``v``."""
    above, below = coordinate_positions(o, v)
    if above.any():
        return Position.ABOVE
    if below.all():
        return Position.BELOW
    return Position.OVERLAPPING


def is_fully_missing(o: Observation) -> bool:
    return bool(np.all(o.kind == MISSING))


def _to_frechet(y, chi: MarginParams):
    # elementwise over stations; y >= v assumed where finite
    with np.errstate(invalid="ignore", over="ignore"):
        ls = log_tail_ratio(y, chi.sigma, chi.xi, chi.threshold)
        return frechet_from_log_tail(ls, chi.zeta)


def censor_transform(o: Observation, chi: MarginParams) -> FrechetObs:
    """Standardize above-threshold parts and censor everything below ``v``."""
    v, u = chi.threshold, chi.u
    k = o.kind
    d = o.d
    with np.errstate(invalid="ignore"):
        exact_below = (k == EXACT) & (o.value < v)
        right_low = (k == RIGHT) & (o.lower < v)
        kind = np.where(exact_below, INTERVAL, np.where(right_low, MISSING, k))
        y_safe = np.where((k == EXACT) & ~exact_below, o.value, v)
        x = np.where((k == EXACT) & ~exact_below, _to_frechet(y_safe, chi), np.nan)
        lo_raw = np.where(k == EXACT, o.value, o.lower)
        hi_raw = np.where(k == EXACT, o.value, o.upper)
        lo_low = ~(lo_raw >= v)
        hi_low = hi_raw < v
        lower = np.where(lo_low, 0.0, _to_frechet(np.where(lo_low, v, lo_raw), chi))
        upper = np.where(hi_low, u, _to_frechet(np.where(hi_low | np.isnan(hi_raw), v, hi_raw), chi))
    missing = kind == MISSING
    lower = np.where(missing, 0.0, lower)
    upper = np.where(missing, np.inf, np.where(np.isinf(hi_raw), np.inf, upper))
    exact = kind == EXACT
    lower = np.where(exact, x, lower)
    upper = np.where(exact, x, upper)
    assert lower.shape == (d,)
    return FrechetObs(kind.astype(int), x, lower, upper)


def overlap_key(o: Observation, v) -> tuple:
    """Data-scale upper-bound vector of an overlapping record.

    Below-threshold stations contribute ``v_j`` (their standardized bound is
    ``u_j``), straddling intervals their upper bound, and right-censored or
    missing stations ``inf``.
    """
    v = np.asarray(v, dtype=float)
    _, below = coordinate_positions(o, v)
    k = o.kind
    key = np.where(below, v, np.where(k == INTERVAL, o.upper, np.inf))
    return tuple(float(t) for t in key)


def summarize(dataset: Iterable[Observation], v) -> DatasetSummary:
    """Counts per position and overlap blocks keyed by their bound vectors.

    Fully-missing days are dropped. Overlapping records sharing a bound
    vector form one block whether or not they are consecutive (the Poisson
    likelihood only depends on the count per bound vector); blocks are
    ordered by first occurrence.
    """
    s = DatasetSummary()
    counts: dict[tuple, int] = {}
    for i, o in enumerate(dataset):
        if is_fully_missing(o):
            continue
        s.n_obs += 1
        pos = classify(o, v)
        if pos is Position.ABOVE:
            s.n_above += 1
            s.above_index.append(i)
        elif pos is Position.BELOW:
            s.n_below += 1
        else:
            s.n_overlap += 1
            key = overlap_key(o, v)
            counts[key] = counts.get(key, 0) + 1
    s.blocks = [(np.array(key), n) for key, n in counts.items()]
    return s


def _merge_maxima(records: Sequence[Observation]) -> Observation:
    """Componentwise maximum with conservative censoring.

    The maximum lies between the largest lower bound and the largest upper
    bound over the days; it is exact only when an exact value attains the
    largest upper bound.
    """
    kinds = np.array([r.kind for r in records])
    lo = np.array([np.where(r.kind == MISSING, -np.inf, r.lower) for r in records])
    hi = np.array([np.where(r.kind == MISSING, np.inf, r.upper) for r in records])
    vals = np.array([r.value for r in records])
    d = kinds.shape[1]
    kind = np.zeros(d, dtype=int)
    value = np.full(d, np.nan)
    lower = np.full(d, np.nan)
    upper = np.full(d, np.nan)
    for j in range(d):
        if np.all(kinds[:, j] == MISSING):
            continue
        top_lo, top_hi = lo[:, j].max(), hi[:, j].max()
        exact_max = np.nanmax(np.where(kinds[:, j] == EXACT, vals[:, j], -np.inf))
        if exact_max == top_hi:
            kind[j], value[j] = EXACT, exact_max
        elif np.isinf(top_hi):
            kind[j], lower[j], upper[j] = RIGHT, max(top_lo, 0.0), np.inf
        else:
            kind[j], lower[j], upper[j] = INTERVAL, max(top_lo, 0.0), top_hi
    return Observation(records[0].day, kind, value, lower, upper)


def decluster(dataset: Sequence[Observation], v, lag: int, overlap_ends: bool = True) -> list[Cluster]:
    """Run-declustering of multivariate excesses.

    A cluster opens on a record with a determinately-above station and
    closes after ``lag`` consecutive quiet days. With ``overlap_ends`` (the
    default) quiet days are those where no excess can be ascertained
    (below, overlapping, or missing). With ``overlap_ends=False`` only
    determinately-below days count, and any other non-excess day restarts
    the run. Day indices absent from the sequence count as missing days.
    """
    if lag < 1:
        raise DomainError("declustering lag must be at least 1")
    records = sorted(dataset, key=lambda r: r.day)
    clusters: list[Cluster] = []
    current: list[Observation] = []
    run = 0
    last_day = None

    def close():
        above_days = [r.day for r in current if classify(r, v) is Position.ABOVE]
        span = [r for r in current if r.day <= above_days[-1]]
        clusters.append(Cluster(span[0].day, above_days[-1], _merge_maxima(span)))

    for r in records:
        if current and last_day is not None and r.day - last_day > 1:
            gap = r.day - last_day - 1
            if overlap_ends:
                run += gap
                if run >= lag:
                    close()
                    current, run = [], 0
            else:
                run = 0
        last_day = r.day
        pos = classify(r, v) if not is_fully_missing(r) else Position.OVERLAPPING
        if pos is Position.ABOVE:
            current.append(r)
            run = 0
            continue
        if not current:
            continue
        current.append(r)
        if pos is Position.BELOW or overlap_ends:
            run += 1
        else:
            run = 0
        if run >= lag:
            close()
            current, run = [], 0
    if current:
        close()
    return clusters
