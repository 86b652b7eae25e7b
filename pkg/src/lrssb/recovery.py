"""First-moment filtering and greedy extraction over a candidate net.

Pipeline: weighted moment matrix -> top-k subspace -> lattice net of the
annulus ``Delta <= ||v|| <= B`` inside it -> conditional statistics for every
candidate -> keep candidates whose conditional means vanish at both scales
-> repeatedly pick the candidate with the smallest truncated second moment
and prune everything it explains.
"""

import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .moments import EmptyEvent, batch_conditional_stats, event_bounds, event_probability_analytic
from .model import StructuralError
from .net import NetTooLarge, build_net, estimate_net_size
from .subspace import (SubspaceError, build_weighted_moment_matrix, default_truncation_threshold,
                       extract_subspace)

log = logging.getLogger(__name__)

MODES = ("theory", "practical")


class ParameterUnderflow(ArithmeticError):
    def __init__(self, name, log10_value):
        super().__init__(f"{name} ~ 10^{log10_value:.4g} is below the smallest positive double; "
                         "use practical mode")
        self.name = name
        self.log10_value = log10_value


class RecoveryError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class OverSelectionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TheoryConstants:
    C: float = 4.0
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    theta: float = 1.0  # exponent constant inside k^Theta(B^4/Delta^4)


@dataclass(frozen=True)
class DerivedParams:
    t: float
    gamma: float
    delta: float
    net_resolution: float
    epsilon: float
    mode: str = "practical"
    constants: TheoryConstants = None
    # log10 of the diagnostic sample counts; None in practical mode
    log10_m_cov: float = None
    log10_m_est: float = None
    log10_m_moments: float = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise StructuralError(f"mode must be one of {MODES}")
        if self.t <= 0 or self.gamma <= 0:
            raise StructuralError("t and gamma must be positive")
        if self.mode == "theory" and self.t < 1:
            raise StructuralError("theory mode requires t >= 1")
        if not 0 < self.delta < 1:
            raise StructuralError("delta must lie in (0, 1)")
        if not 0 < self.net_resolution < self.epsilon:
            raise StructuralError("need 0 < net resolution < epsilon")

    def event_lower(self, k):
        return event_bounds(self.t, k, self.delta)[0]

    def pruning_radius(self, k):
        return 2.0 * self.gamma / self.event_lower(k)

    def to_dict(self):
        d = asdict(self)
        d["constants"] = asdict(self.constants) if self.constants else None
        return d


def _log_or_fail(name, log_value):
    if log_value < math.log(np.finfo(float).tiny):
        raise ParameterUnderflow(name, log_value / math.log(10))
    return math.exp(log_value)


def derive_params(p, constants=None):
    """Theory-mode parameters; every magnitude is formed in log space so underflow is detected."""
    c = constants or TheoryConstants()
    B, D, eps, k, n = p.bound_b, p.delta, p.epsilon, p.k, p.n
    t = c.C * B**2 / D**2
    inner = math.log(B / (c.c1 * eps))
    if inner <= 0:
        raise StructuralError("need B > c1 * epsilon")
    log_gamma = math.log(c.c1) + 4 * math.log(eps) - 2 * math.log(B) - math.log(inner)
    gamma = _log_or_fail("gamma", log_gamma)
    # log(B t k / (c2 gamma)) without forming the ratio
    log_arg = math.log(B) + math.log(t) + math.log(k) - math.log(c.c2) - log_gamma
    log_delta = (math.log(c.c2) + 2 * log_gamma - 4 * math.log(B) - 4 * math.log(t)
                 - 2 * math.log(log_arg))
    delta = _log_or_fail("delta", log_delta)
    log_k_over_delta = math.log(k) - log_delta
    log_eps_prime = math.log(c.c3) + log_gamma - math.log(2 * t) - 0.5 * math.log(log_k_over_delta)
    eps_prime = _log_or_fail("net resolution", log_eps_prime)

    logk = max(math.log(k), 1.0)
    expo = c.theta * B**4 / D**4
    lam = p.lam
    log_m_cov = (math.log(c.C) + 34 * math.log(B) + expo * math.log(k)
                 + 4 * math.log(math.log(k * n * B * logk) - log_eps_prime)
                 + math.log(n + math.sqrt(math.log(2 / lam)))
                 - 2 * math.log(logk) - 24 * math.log(D) - 4 * log_eps_prime)
    log_K = 6 * math.log(B) + math.log(log_k_over_delta) - 4 * math.log(D)
    covering = math.log(c.C) + 3 * math.log(B) + 0.5 * math.log(log_k_over_delta) - 2 * math.log(D) - log_gamma
    log_m_est = (math.log(c.C) + 2 * log_K + math.log(k * max(covering, 1.0) + math.log(2 / lam))
                 - 2 * log_gamma)
    log_m_moments = math.log(c.C) + expo * log_k_over_delta + log_m_est
    ln10 = math.log(10)
    return DerivedParams(t, gamma, delta, eps_prime, eps, "theory", c,
                         log_m_cov / ln10, log_m_est / ln10, log_m_moments / ln10)


def practical_params(t, gamma, delta, net_resolution, epsilon):
    return DerivedParams(float(t), float(gamma), float(delta), float(net_resolution), float(epsilon),
                         "practical")


def project_onto_direction(v, x):
    """``(x . v_bar) v_bar``."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise StructuralError("cannot project onto the zero vector")
    vb = v / norm
    return (np.asarray(x, dtype=float) @ vb) * vb


def filter_by_first_moments(stats, gamma):
    """Indices with ``max(|m1_t|, |m1_4t|) <= 5 gamma / 8``; undersampled ones are rejected and counted."""
    with np.errstate(invalid="ignore"):
        worst = np.maximum(np.abs(stats.m1_t), np.abs(stats.m1_4t))  # NaN (empty event) fails
        passes = worst <= 5.0 * gamma / 8.0
    keep = passes & ~stats.undersampled
    return np.flatnonzero(keep), int(np.count_nonzero(stats.undersampled))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    selected_index: int
    selected: tuple
    m2: float
    ball_size: int
    deleted_by_ball: tuple
    deleted_by_projection: tuple


@dataclass(frozen=True, eq=False)
class ExtractionResult:
    estimates: np.ndarray
    selected_indices: tuple
    iterations: tuple
    over_selection: bool
    remaining: int


def iterative_extraction(points, m2, indices, epsilon, gamma, t, delta, k, max_iters=None, chunk=4096):
    """Greedy selection over the surviving candidates ``indices`` (rows of ``points``).

    Ties in ``m2`` go to the lowest candidate index.
    """
    points = np.asarray(points, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    alive = np.array(sorted(int(i) for i in indices), dtype=int)
    radius = 2.0 * gamma / event_bounds(t, k, delta)[0]
    max_iters = 4 * k if max_iters is None else max_iters
    estimates, chosen, records = [], [], []
    it = 0
    while alive.size and len(estimates) < k and it < max_iters:
        it += 1
        star = int(alive[np.argmin(m2[alive])])
        vstar = points[star]
        in_ball = np.linalg.norm(points[alive] - vstar, axis=1) <= 2.0 * epsilon
        ball, rest = alive[in_ball], alive[~in_ball]
        drop = np.zeros(rest.size, dtype=bool)
        sv = points[ball]
        for s in range(0, rest.size, chunk):
            w = points[rest[s:s + chunk]]
            wn = np.linalg.norm(w, axis=1)
            gap = np.abs(sv @ (w / wn[:, None]).T - wn[None, :])
            drop[s:s + chunk] = np.any(gap <= radius, axis=0)
        records.append(IterationRecord(it, star, tuple(float(a) for a in vstar), float(m2[star]),
                                       int(ball.size), tuple(int(i) for i in ball),
                                       tuple(int(i) for i in rest[drop])))
        log.info("iteration %d: selected %d (m2=%.6g), ball %d, pruned %d, left %d",
                 it, star, m2[star], ball.size, int(drop.sum()), int((~drop).sum()))
        estimates.append(vstar)
        chosen.append(star)
        alive = rest[~drop]
    over = bool(alive.size) and len(estimates) >= k
    if over:
        warnings.warn(f"{alive.size} candidates survive after {k} selections; the first-moment filter "
                      "is likely miscalibrated", OverSelectionWarning, stacklevel=2)
    est = np.array(estimates) if estimates else np.zeros((0, points.shape[1]))
    return ExtractionResult(est, tuple(chosen), tuple(records), over, int(alive.size))


@dataclass
class RecoveryConfig:
    mode: str = "practical"
    t: float = None
    gamma: float = None
    delta: float = None
    net_resolution: float = None
    epsilon: float = None  # defaults to the problem's epsilon
    constants: TheoryConstants = field(default_factory=TheoryConstants)
    truncation_threshold: float = None  # None: default rule; math.inf disables
    count_floor: int = 50
    max_iters: int = None
    max_net_points: int = 10**7
    subspace_samples: int = None  # None: reuse the whole batch for the subspace step
    n_threads: int = None

    def params(self, problem):
        if self.mode == "theory":
            given = [self.t, self.gamma, self.delta, self.net_resolution]
            if any(x is not None for x in given):
                raise StructuralError("theory mode derives t, gamma, delta and resolution; do not set them")
            return derive_params(problem, self.constants)
        if self.mode != "practical":
            raise StructuralError(f"mode must be one of {MODES}")
        missing = [n for n in ("t", "gamma", "delta", "net_resolution") if getattr(self, n) is None]
        if missing:
            raise StructuralError(f"practical mode needs {', '.join(missing)}")
        eps = problem.epsilon if self.epsilon is None else self.epsilon
        return practical_params(self.t, self.gamma, self.delta, self.net_resolution, eps)


@dataclass(eq=False)
class RecoveryReport:
    estimates: np.ndarray
    survivors_after_filter: int
    iterations: tuple
    params: DerivedParams
    undersampled: int
    net_size: int
    eigenvalues: np.ndarray
    bulk_level: float
    samples_truncated: int
    over_selection: bool
    event_probability_t: float
    event_probability_4t: float
    k: int
    stats: object = field(default=None, repr=False)
    basis: np.ndarray = field(default=None, repr=False)
    timings_ms: dict = field(default_factory=dict)

    @property
    def success(self):
        return self.estimates.shape[0] == self.k

    def to_dict(self):
        """JSON-ready content; timings are left out so reruns compare equal."""
        return {
            "estimates": self.estimates.tolist(),
            "extracted": int(self.estimates.shape[0]),
            "k": self.k,
            "survivors_after_filter": self.survivors_after_filter,
            "undersampled": self.undersampled,
            "net_size": self.net_size,
            "over_selection": self.over_selection,
            "iterations": [asdict(r) for r in self.iterations],
            "params": self.params.to_dict(),
            "eigenvalues": self.eigenvalues.tolist(),
            "bulk_level": self.bulk_level,
            "samples_truncated": self.samples_truncated,
            "event_probability_t": self.event_probability_t,
            "event_probability_4t": self.event_probability_4t,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def recover(batch, problem, mode=None, config=None):
    """Run the whole pipeline; stage failures surface as ``RecoveryError`` with the stage name."""
    cfg = config or RecoveryConfig()
    if mode is not None and mode != cfg.mode:
        cfg = RecoveryConfig(**{**cfg.__dict__, "mode": mode})
    if batch.n != problem.n:
        raise StructuralError(f"batch dimension {batch.n} differs from problem n={problem.n}")
    batch = batch.observed()
    k = problem.k
    timings = {}

    def stage(name, fn):
        start = time.perf_counter()
        try:
            return fn()
        except (EmptyEvent, NetTooLarge, SubspaceError, ParameterUnderflow, StructuralError,
                ValueError) as exc:
            raise RecoveryError(name, exc) from exc
        finally:
            timings[name] = (time.perf_counter() - start) * 1e3

    params = stage("params", lambda: cfg.params(problem))

    def subspace_step():
        sub_batch = batch if cfg.subspace_samples is None else batch.head(cfg.subspace_samples)
        thr = cfg.truncation_threshold
        if thr is None:
            thr = default_truncation_threshold(problem.n, k, problem.bound_b, params.net_resolution)
        mom = build_weighted_moment_matrix(sub_batch, thr, n_threads=cfg.n_threads)
        return mom, extract_subspace(mom, k)

    moment, sub = stage("subspace", subspace_step)
    net = stage("net", lambda: build_net(sub, problem.delta, problem.bound_b, params.net_resolution,
                                         max_points=cfg.max_net_points))
    stats = stage("statistics", lambda: batch_conditional_stats(
        batch, net, params.t, params.delta, k, count_floor=cfg.count_floor, n_threads=cfg.n_threads))
    kept, under = stage("filter", lambda: filter_by_first_moments(stats, params.gamma))
    result = stage("extraction", lambda: iterative_extraction(
        net.points, stats.m2_t, kept, params.epsilon, params.gamma, params.t, params.delta, k,
        max_iters=cfg.max_iters))
    lo, hi = event_bounds(params.t, k, params.delta)
    return RecoveryReport(result.estimates, int(kept.size), result.iterations, params, under, len(net),
                          sub.eigenvalues, sub.bulk_level, moment.samples_truncated,
                          result.over_selection, event_probability_analytic(lo, hi),
                          event_probability_analytic(4 * lo, 4 * hi), k, stats, sub.basis, timings)


def net_size_for(problem, params):
    return estimate_net_size(problem.k, problem.delta, problem.bound_b, params.net_resolution)
