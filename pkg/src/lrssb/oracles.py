"""Independent reference computations and the ground-truth matching metric.

Nothing here shares code with the estimation path: truncated-normal moments
use closed forms, the conditional oracle samples the event directly instead
of filtering a batch, and the convolution oracle integrates on a grid.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from ._parallel import block_rngs, block_slices, map_ordered, tree_sum
from .model import StructuralError, observe

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)


class IntervalTooFar(ArithmeticError):
    pass


class PrecisionError(ArithmeticError):
    pass


class InconsistentVariance(ValueError):
    pass


# ---------------------------------------------------------------- truncated normal

def truncated_gaussian_mean(a, b):
    """Mean of a standard normal restricted to ``[a, b]``.

    Evaluated with scaled complementary error functions so intervals deep in
    a tail keep full relative precision.
    """
    a, b = float(a), float(b)
    if not a < b:
        raise ValueError("need a < b")
    if a < 0 and b <= 0:
        return -truncated_gaussian_mean(-b, -a)
    if a < 0:
        # interval straddles zero: nothing to cancel
        num = (math.exp(-a * a / 2) - (math.exp(-b * b / 2) if math.isfinite(b) else 0.0)) / SQRT2PI
        den = 1.0 - 0.5 * special.erfc(-a / SQRT2) - 0.5 * special.erfc(b / SQRT2)
        if den <= 0:
            raise IntervalTooFar(f"mass of [{a}, {b}] underflows")
        return num / den
    # 0 <= a < b: factor exp(-a^2/2) out of numerator and denominator
    ratio = math.exp(-(b * b - a * a) / 2) if math.isfinite(b) else 0.0
    num = (1.0 - ratio) / SQRT2PI
    tail_b = special.erfcx(b / SQRT2) if math.isfinite(b) else 0.0
    den = 0.5 * (special.erfcx(a / SQRT2) - tail_b * ratio)
    if not den > 0 or not math.isfinite(den):
        raise IntervalTooFar(f"mass of [{a}, {b}] underflows")
    return num / den


def sample_truncated_normal(rng, lower, upper, size):
    """Inverse-CDF draws from N(0, 1) restricted to ``[lower, upper]``, computed on the upper tail."""
    hi_tail = special.ndtr(-lower)
    lo_tail = special.ndtr(-upper)
    u = rng.random(size)
    return -special.ndtri(hi_tail - u * (hi_tail - lo_tail))


# ---------------------------------------------------------------- matching

@dataclass(frozen=True, eq=False)
class MatchedError:
    permutation: tuple  # permutation[i] = regressor matched to estimate i
    max_error: float
    per_pair_errors: np.ndarray


def _distances(estimates, truth):
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = truth.vectors if hasattr(truth, "vectors") else np.atleast_2d(np.asarray(truth, dtype=float))
    if est.shape[0] != tru.shape[0]:
        raise StructuralError(f"{est.shape[0]} estimates for {tru.shape[0]} regressors")
    if est.shape[1] != tru.shape[1]:
        raise StructuralError("estimates and regressors live in different dimensions")
    return np.linalg.norm(est[:, None, :] - tru[None, :, :], axis=2)


def _exhaustive(dist):
    k = dist.shape[0]
    perms = np.array(list(itertools.permutations(range(k))))
    worst = dist[np.arange(k)[None, :], perms].max(axis=1)
    best = int(np.argmin(worst))  # first minimizer in lexicographic order
    return tuple(int(p) for p in perms[best])


def bottleneck_matching(dist):
    """Bijection minimizing the largest matched entry, by bisection over sorted thresholds."""
    levels = np.unique(dist)
    lo, hi = 0, len(levels) - 1
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        match = maximum_bipartite_matching(csr_matrix(dist <= levels[mid]), perm_type="column")
        if np.all(match >= 0):
            best, hi = match, mid - 1
        else:
            lo = mid + 1
    return tuple(int(j) for j in best)


def matched_error(estimates, truth, exhaustive_limit=8):
    dist = _distances(estimates, truth)
    k = dist.shape[0]
    perm = _exhaustive(dist) if k <= exhaustive_limit else bottleneck_matching(dist)
    pairs = dist[np.arange(k), list(perm)]
    return MatchedError(perm, float(pairs.max()), pairs)


# ---------------------------------------------------------------- subgaussian bounds

def psi2_norm(law, scale=1.0):
    """Orlicz psi_2 norm by root-finding on ``E exp(X^2/K^2) = 2`` with numerical integration."""
    if scale == 0:
        return 0.0
    if law == "gaussian":
        mgf = lambda K: integrate.quad(lambda x: math.exp(x * x / K**2 - x * x / 2) / SQRT2PI,
                                       -np.inf, np.inf)[0]
        lo = math.sqrt(2.0) * 1.0001
    elif law == "uniform":
        mgf = lambda K: integrate.quad(lambda x: math.exp(x * x / K**2), 0.0, 1.0)[0]
        lo = 0.2
    elif law == "scaled_rademacher":
        mgf = lambda K: math.exp(1.0 / K**2)
        lo = 0.2
    else:
        raise ValueError(f"unknown law {law!r}")
    return scale * optimize.brentq(lambda K: mgf(K) - 2.0, lo, 10.0, xtol=1e-14)


def subgaussian_positive_part_bounds(variance, K, c):
    """Lower bounds ``(E[X_+], Pr(X >= 0))`` for a centered law with the given variance and psi_2 norm."""
    if variance <= 0 or K <= 0 or c <= 0:
        raise ValueError("variance, K and c must be positive")
    if variance > K * K:
        raise InconsistentVariance(f"variance {variance:g} exceeds K^2 = {K * K:g}; no such law exists")
    arg = K * K / (c * variance)
    if arg <= 1:
        raise ValueError("c too large for this variance: log term is nonpositive")
    log_term = math.log(arg)
    return c * variance / (K * math.sqrt(log_term)), c * variance / (K * K * log_term)


def calibrate_sg_constant(safety=0.5):
    """Largest c for which both bounds hold with equality-or-slack for N(0, 1), times ``safety``.

    The bounds are scale free for a fixed law, so unit variance suffices.
    """
    K = math.sqrt(8.0 / 3.0)
    mean_gap = lambda c: 1.0 / SQRT2PI - subgaussian_positive_part_bounds(1.0, K, c)[0]
    prob_gap = lambda c: 0.5 - subgaussian_positive_part_bounds(1.0, K, c)[1]
    top = K * K * (1 - 1e-9)
    roots = []
    for gap in (mean_gap, prob_gap):
        roots.append(optimize.brentq(gap, 1e-6, top) if gap(top) < 0 else top)
    return safety * min(roots)


# ---------------------------------------------------------------- second-moment increase

def _smoothed_positive_square(a, eps):
    """``E[(a + Y)_+^2]`` for ``Y ~ N(0, eps^2)``."""
    u = a / eps
    return (a * a + eps * eps) * special.ndtr(u) + a * eps * np.exp(-u * u / 2) / SQRT2PI


def _expect(law, scale, fn, n_grid):
    if law == "scaled_rademacher":
        return 0.5 * (fn(scale) + fn(-scale))
    if law == "gaussian":
        x = np.linspace(-12 * scale, 12 * scale, n_grid)
        w = np.exp(-(x / scale) ** 2 / 2) / (scale * SQRT2PI)
    elif law == "uniform":
        x = np.linspace(-scale, scale, n_grid)
        w = np.full_like(x, 1.0 / (2 * scale))
    else:
        raise ValueError(f"unknown law {law!r}")
    return integrate.simpson(fn(x) * w, x=x)


def sm_increase_oracle(law, scale, eps, zeta=0.0, n_grid=4001, tol=1e-6):
    """``E[(X + Y - zeta)_+^2] - E[X_+^2]`` with ``Y ~ N(0, eps^2)`` independent of X.

    ``zeta`` is the worst-case constant perturbation (``Z = -zeta``). The
    expectation over X is a Simpson rule on ``n_grid`` points; it is
    recomputed on a doubled grid and a disagreement above ``tol`` raises.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if scale == 0:
        return float(_smoothed_positive_square(-zeta, eps))
    var = scale**2 / 3.0 if law == "uniform" else scale**2
    fn = lambda x: _smoothed_positive_square(x - zeta, eps)
    coarse = _expect(law, scale, fn, n_grid)
    fine = _expect(law, scale, fn, 2 * n_grid - 1)
    if abs(fine - coarse) > tol:
        raise PrecisionError(f"grid refinement moved the result by {abs(fine - coarse):.3g}")
    return float(fine - var / 2.0)


def sm_increase_bound(eps, K, c=1.0):
    """``(lower bound on the increase, admissible |Z|)`` for noise level eps and psi_2 norm K."""
    log_term = math.log(K / (c * eps))
    if log_term <= 0:
        raise ValueError("need K > c eps")
    return c * eps**4 / (K * K * log_term), c * eps**3 / (K * K * log_term)


# ---------------------------------------------------------------- conditional moments

@dataclass(frozen=True)
class OracleMoments:
    m1: float
    m2_plus: float
    m1_se: float
    m2_se: float
    trials: int


def monte_carlo_conditional_oracle(ws, noise, v, event, trials=10**6, seed=0, block_size=1 << 16,
                                   n_threads=None):
    """Moments of ``z - v @ x`` given the event, by sampling the event directly.

    The coordinate along the event direction is drawn from the truncated
    normal; the orthogonal complement is filled with fresh Gaussian noise.
    """
    v = np.asarray(v, dtype=float)
    vecs = ws.vectors if hasattr(ws, "vectors") else np.atleast_2d(ws)
    d = np.asarray(event.direction, dtype=float)
    slices = block_slices(int(trials), block_size)
    rngs = block_rngs(seed, len(slices))

    def one_block(args):
        sl, rng = args
        size = sl.stop - sl.start
        s = sample_truncated_normal(rng, event.lower, event.upper, size)
        g = rng.standard_normal((size, vecs.shape[1]))
        x = g - np.outer(g @ d, d) + np.outer(s, d)
        z, _ = observe(x, vecs, noise.sample(rng, size))
        y = z - x @ v
        yp2 = np.maximum(y, 0.0) ** 2
        return np.array([y.sum(), (y * y).sum(), yp2.sum(), (yp2 * yp2).sum()])

    sums = tree_sum(map_ordered(one_block, zip(slices, rngs), n_threads))
    n = float(trials)
    m1, m2 = sums[0] / n, sums[2] / n
    var1 = max(sums[1] / n - m1 * m1, 0.0)
    var2 = max(sums[3] / n - m2 * m2, 0.0)
    return OracleMoments(float(m1), float(m2), math.sqrt(var1 / n), math.sqrt(var2 / n), int(trials))
