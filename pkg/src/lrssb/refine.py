"""Alternating minimization for the max-linear model, started from recovered regressors.

Each step assigns every sample to the estimate attaining ``max_j x @ w_j``
and refits each estimate by least squares on its cluster. The fitted
objective ``mean((z - max_j x @ w_j)^2)`` is not guaranteed to decrease
under the refit, so a step that would raise it is rejected and the
iteration stops there.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .model import StructuralError

RIDGE = 1e-8


@dataclass(frozen=True, eq=False)
class AmState:
    estimates: np.ndarray
    iteration: int
    last_assignment_change_fraction: float
    residual_rms: float
    converged: bool = False
    assignment: np.ndarray = field(default=None, repr=False)
    cluster_sizes: tuple = ()
    flags: tuple = ()


def _assign(xs, est):
    return np.argmax(xs @ est.T, axis=1)


def fitted_objective(batch, estimates):
    """``mean((z - max_j x @ w_j)^2)``."""
    pred = np.max(batch.xs @ np.asarray(estimates).T, axis=1)
    return float(np.mean((batch.zs - pred) ** 2))


def _state(batch, est, iteration, change, converged=False, flags=()):
    assign = _assign(batch.xs, est)
    sizes = tuple(int(c) for c in np.bincount(assign, minlength=est.shape[0]))
    rms = math.sqrt(fitted_objective(batch, est))
    return AmState(est, iteration, change, rms, converged, assign, sizes, tuple(flags))


def initial_state(batch, warm_start):
    est = np.atleast_2d(np.array(warm_start, dtype=float))
    if est.shape[1] != batch.n:
        raise StructuralError(f"warm start lives in R^{est.shape[1]}, batch in R^{batch.n}")
    return _state(batch, est, 0, math.nan)


def am_step(batch, state, min_cluster=None, ridge=RIDGE):
    """One assignment-then-fit step; see the module docstring for the acceptance rule."""
    xs, zs = batch.xs, batch.zs
    est = state.estimates
    k, n = est.shape
    min_cluster = 2 * n if min_cluster is None else min_cluster
    assign = state.assignment if state.assignment is not None else _assign(xs, est)
    new = est.copy()
    flags = []
    for j in range(k):
        rows = assign == j
        if np.count_nonzero(rows) < min_cluster:
            flags.append(f"cluster {j}: {int(np.count_nonzero(rows))} samples, estimate kept")
            continue
        xj = xs[rows]
        gram = xj.T @ xj
        rhs = xj.T @ zs[rows]
        if np.linalg.cond(gram) > 1e12:
            gram = gram + ridge * np.eye(n)
            flags.append(f"cluster {j}: ill-conditioned, ridge {ridge:g}")
        new[j] = np.linalg.solve(gram, rhs)
    new_assign = _assign(xs, new)
    change = float(np.mean(new_assign != assign))
    nxt = _state(batch, new, state.iteration + 1, change, flags=flags)
    if nxt.residual_rms > state.residual_rms + 1e-9:
        flags.append("step raised the fitted objective; rejected")
        return replace(state, iteration=state.iteration + 1, flags=tuple(flags))
    return nxt


def refine(batch, warm_start, max_iters=50, tol=1e-3, force=False, min_cluster=None, trace=None):
    """Iterate ``am_step`` until the assignment change fraction drops below ``tol``.

    Non-convergence is reported through ``converged=False``, never raised.
    ``trace`` (a list) receives one ``AmState`` per step, starting with the
    warm start.
    """
    kind = batch.noise_kind
    if kind and kind != "shared_scalar" and not force:
        raise StructuralError(f"refinement targets the max-linear model; batch has {kind!r} noise "
                              "(pass force=True to override)")
    if not kind and not force:
        warnings.warn("batch noise kind unknown; assuming a max-linear batch", stacklevel=2)
    state = initial_state(batch, warm_start)
    if trace is not None:
        trace.append(state)
    for _ in range(max_iters):
        nxt = am_step(batch, state, min_cluster)
        if trace is not None:
            trace.append(nxt)
        rejected = nxt.estimates is state.estimates
        state = nxt
        if rejected:
            return state
        if nxt.last_assignment_change_fraction < tol:
            return replace(state, converged=True)
    return state


def save_trace_csv(trace, path):
    """Columns: iteration, residual_rms, change fraction, one size column per cluster."""
    k = trace[0].estimates.shape[0]
    rows = [[s.iteration, s.residual_rms, s.last_assignment_change_fraction, *s.cluster_sizes]
            for s in trace]
    header = ",".join(["iteration", "residual_rms", "change_fraction"] + [f"size_{j}" for j in range(k)])
    np.savetxt(path, np.array(rows, dtype=float), delimiter=",", header=header, comments="",
               fmt=["%d", "%.17g", "%.17g"] + ["%d"] * k)
