"""Localization events and the conditional statistics computed on them.

For a candidate ``v`` the event keeps samples whose covariate projection on
``v / ||v||`` lies in ``[s, 2s]`` with ``s = t sqrt(log(k / delta))``. On it we
average the debiased response ``Y = z - v @ x``: the mean (``m1``) and the
mean squared positive part (``m2_plus``).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._parallel import map_ordered

DEFAULT_COUNT_FLOOR = 50


class EmptyEvent(RuntimeError):
    """No sample fell in the event. Carries what is needed to diagnose undersampling."""

    def __init__(self, probability, batch_size):
        super().__init__(f"no samples in event (analytic probability {probability:.3g}, "
                         f"batch size {batch_size}, expected count {probability * batch_size:.3g})")
        self.probability = probability
        self.batch_size = batch_size


def event_bounds(t, k, delta):
    """``(t sqrt(log(k/delta)), 2 t sqrt(log(k/delta)))``."""
    if t <= 0:
        raise ValueError("t must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if k / delta <= 1:
        raise ValueError("k/delta must exceed 1")
    lower = t * math.sqrt(math.log(k / delta))
    return lower, 2.0 * lower


@dataclass(frozen=True, eq=False)
class LocalizationEvent:
    direction: np.ndarray
    lower: float
    upper: float
    t: float = math.nan
    delta: float = math.nan

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-10:
            raise ValueError("event direction must be a unit vector")
        if not self.lower < self.upper:
            raise ValueError("need lower < upper")
        object.__setattr__(self, "direction", d)

    @classmethod
    def for_vector(cls, v, t, k, delta):
        v = np.asarray(v, dtype=float)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("candidate vector must be nonzero")
        lo, hi = event_bounds(t, k, delta)
        return cls(v / norm, lo, hi, t, delta)

    def contains(self, xs):
        proj = np.asarray(xs) @ self.direction
        return (proj >= self.lower) & (proj <= self.upper)


def normal_upper_tail(a):
    return 0.5 * special.erfc(np.asarray(a, dtype=float) / math.sqrt(2.0))


def event_probability_analytic(event_or_lower, upper=None):
    """``P(lower <= g <= upper)`` for standard normal ``g``."""
    if upper is None:
        lower, upper = event_or_lower.lower, event_or_lower.upper
    else:
        lower = event_or_lower
    if not lower < upper:
        raise ValueError("need lower < upper")
    if lower >= 0:
        return float(normal_upper_tail(lower) - normal_upper_tail(upper))
    if upper <= 0:
        return float(normal_upper_tail(-upper) - normal_upper_tail(-lower))
    return float(1.0 - normal_upper_tail(-lower) - normal_upper_tail(upper))


@dataclass(frozen=True, eq=False)
class ConditionalStats:
    m1: float
    m2_plus: float
    count: int
    v: np.ndarray
    m1_se: float = math.nan
    m2_se: float = math.nan
    m2_full: float = math.nan  # untruncated E[Y^2 | A]; diagnostic only


def _moments(y):
    count = y.size
    yp2 = np.maximum(y, 0.0) ** 2
    m1 = float(np.mean(y))
    m2 = float(np.mean(yp2))
    if count > 1:
        se1 = float(np.std(y, ddof=1) / math.sqrt(count))
        se2 = float(np.std(yp2, ddof=1) / math.sqrt(count))
    else:
        se1 = se2 = math.inf
    return m1, m2, se1, se2, float(np.mean(y * y))


def conditional_stats(batch, v, event):
    """Empirical ``E[z - v@x | A]`` and ``E[(z - v@x)_+^2 | A]`` on the closed event."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("candidate vector must be nonzero")
    if np.linalg.norm(event.direction - v / norm) > 1e-10:
        raise ValueError("event direction must equal v / ||v||")
    mask = event.contains(batch.xs)
    if not mask.any():
        raise EmptyEvent(event_probability_analytic(event), batch.m)
    y = batch.zs[mask] - batch.xs[mask] @ v
    m1, m2, se1, se2, full = _moments(y)
    return ConditionalStats(m1, m2, int(mask.sum()), v, se1, se2, full)


@dataclass(frozen=True, eq=False)
class CandidateStats:
    """Per-candidate statistics at scales t and 4t, aligned with the candidate order."""

    points: np.ndarray
    m1_t: np.ndarray
    m1_4t: np.ndarray
    m2_t: np.ndarray
    count_t: np.ndarray
    count_4t: np.ndarray
    m1_t_se: np.ndarray
    m1_4t_se: np.ndarray
    m2_t_se: np.ndarray
    undersampled: np.ndarray
    t: float
    delta: float
    k: int
    count_floor: int

    def __len__(self):
        return self.points.shape[0]


def _chunk_stats(proj, norms, zs, lo, hi):
    """Per-column sums over samples in [lo, hi]; ``proj`` is (m, c).

    Only in-event entries are touched, and each column is accumulated in
    ascending sample order, so results do not depend on the chunking.
    """
    rows, cols = np.nonzero((proj >= lo) & (proj <= hi))
    c = proj.shape[1]
    y = zs[rows] - proj[rows, cols] * norms[cols]
    yp2 = np.maximum(y, 0.0) ** 2
    acc = lambda w: np.bincount(cols, weights=w, minlength=c)
    return np.bincount(cols, minlength=c), acc(y), acc(y * y), acc(yp2), acc(yp2 * yp2)


def _finish(cnt, s1, s2, s2p, s4p):
    with np.errstate(invalid="ignore", divide="ignore"):
        c = cnt.astype(float)
        m1 = s1 / c
        m2p = s2p / c
        var1 = (s2 - c * m1**2) / (c - 1)
        var2 = (s4p - c * m2p**2) / (c - 1)
        se1 = np.sqrt(np.maximum(var1, 0.0) / c)
        se2 = np.sqrt(np.maximum(var2, 0.0) / c)
    empty = cnt == 0
    m1[empty] = np.nan
    m2p[empty] = np.nan
    se1[cnt < 2] = np.inf
    se2[cnt < 2] = np.inf
    return m1, m2p, se1, se2


def batch_conditional_stats(batch, net, t, delta, k, four_t=True, count_floor=DEFAULT_COUNT_FLOOR,
                            n_threads=None, chunk_size=16):
    """Statistics for every net point in one shared pass over the batch.

    ``net`` is a ``CandidateNet`` (projections computed in subspace
    coordinates) or an ``(N, n)`` array of candidates. Candidates with fewer
    than ``count_floor`` samples in any event are flagged undersampled; their
    statistics are still reported (NaN when the event is empty).
    """
    if hasattr(net, "coords"):
        xr = batch.xs @ net.basis
        cand = net.coords
        points = net.points
    else:
        points = np.atleast_2d(np.asarray(net, dtype=float))
        xr, cand = batch.xs, points
    if cand.shape[0] == 0:
        raise ValueError("net is empty")
    norms = np.linalg.norm(cand, axis=1)
    if np.any(norms == 0):
        raise ValueError("net contains the zero vector")
    dirs = cand / norms[:, None]
    lo, hi = event_bounds(t, k, delta)
    lo4, hi4 = event_bounds(4 * t, k, delta)
    zs = batch.zs
    chunks = [slice(s, min(s + chunk_size, len(cand))) for s in range(0, len(cand), chunk_size)]

    def one_chunk(sl):
        if batch.m == 0:
            zero = np.zeros(sl.stop - sl.start)
            return [(zero.astype(int), zero, zero, zero, zero)] * 2
        proj = xr @ dirs[sl].T
        out = [_chunk_stats(proj, norms[sl], zs, lo, hi)]
        if four_t:
            out.append(_chunk_stats(proj, norms[sl], zs, lo4, hi4))
        return out

    parts = map_ordered(one_chunk, chunks, n_threads)
    small = [_finish(*[np.concatenate([p[0][i] for p in parts]) for i in range(5)])]
    cnt_t = np.concatenate([p[0][0] for p in parts])
    if four_t:
        small.append(_finish(*[np.concatenate([p[1][i] for p in parts]) for i in range(5)]))
        cnt_4t = np.concatenate([p[1][0] for p in parts])
    else:
        nan = np.full(len(cand), np.nan)
        small.append((nan, nan, nan, nan))
        cnt_4t = np.zeros(len(cand), dtype=int)
    m1_t, m2_t, se1_t, se2_t = small[0]
    m1_4t, _, se1_4t, _ = small[1]
    under = cnt_t < count_floor
    if four_t:
        under |= cnt_4t < count_floor
    return CandidateStats(points, m1_t, m1_4t, m2_t, cnt_t, cnt_4t, se1_t, se1_4t, se2_t, under,
                          float(t), float(delta), int(k), int(count_floor))


def save_stats_csv(stats, path):
    """Columns: candidate index, ||v||, m1_t, m1_4t, m2_t, count_t, count_4t."""
    norms = np.linalg.norm(stats.points, axis=1)
    table = np.column_stack([np.arange(len(stats)), norms, stats.m1_t, stats.m1_4t, stats.m2_t,
                             stats.count_t, stats.count_4t])
    np.savetxt(path, table, delimiter=",", fmt=["%d", "%.17g", "%.17g", "%.17g", "%.17g", "%d", "%d"],
               header="candidate,norm,m1_t,m1_4t,m2_t,count_t,count_4t", comments="")
