"""Spectral estimate of a k-dimensional subspace that nearly contains every regressor.

The weighted second-moment matrix ``E[max(0, z)^2 x x^T]`` equals
``E[max(0, z)^2]`` on the orthogonal complement of the regressor span and is
strictly larger on the span, so its top-k eigenvectors locate the span.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._parallel import DEFAULT_BLOCK, block_slices, map_ordered, tree_sum


class SubspaceError(RuntimeError):
    pass


class DegenerateSpectrumWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class WeightedMomentMatrix:
    matrix: np.ndarray
    truncation_threshold: float
    samples_used: int
    samples_truncated: int


@dataclass(frozen=True, eq=False)
class SubspaceEstimate:
    basis: np.ndarray
    eigenvalues: np.ndarray
    bulk_level: float
    degenerate: bool = False

    @property
    def k(self):
        return self.basis.shape[1]

    def project(self, v):
        return self.basis @ (self.basis.T @ v)


def default_truncation_threshold(n, k, bound_b, eps_prime):
    """``8 B sqrt(log(n B max(log k, 1) / eps') + 1)``; tuned so truncation is rare at desk scale."""
    arg = n * bound_b * max(math.log(k), 1.0) / eps_prime
    return 8.0 * bound_b * math.sqrt(max(math.log(arg), 0.0) + 1.0)


def build_weighted_moment_matrix(batch, truncation_threshold=math.inf, n_threads=None,
                                 block_size=DEFAULT_BLOCK):
    """``(1/m) sum max(0, z)^2 x x^T`` over samples with ``max(0, z) <= threshold``."""
    if truncation_threshold <= 0:
        raise ValueError("truncation threshold must be positive")
    m = batch.m
    if m == 0:
        raise ValueError("empty batch")
    xs, zs = batch.xs, batch.zs

    def one_block(sl):
        pos = np.maximum(zs[sl], 0.0)
        keep = pos <= truncation_threshold
        w = np.where(keep, pos * pos, 0.0)
        xb = xs[sl]
        return (xb * w[:, None]).T @ xb, int(np.count_nonzero(~keep))

    parts = map_ordered(one_block, block_slices(m, block_size), n_threads)
    total = tree_sum([p[0] for p in parts]) / m
    total = (total + total.T) / 2.0
    return WeightedMomentMatrix(total, float(truncation_threshold), m, sum(p[1] for p in parts))


def extract_subspace(moment, k):
    """Top-k eigenvectors of the (symmetrized) matrix; ``bulk_level`` is the median of the rest."""
    mat = moment.matrix if isinstance(moment, WeightedMomentMatrix) else np.asarray(moment, dtype=float)
    n = mat.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    mat = (mat + mat.T) / 2.0
    try:
        vals, vecs = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(mat) if np.all(np.isfinite(mat)) else math.inf
        raise SubspaceError(f"eigendecomposition failed (condition number {cond:.3g}, "
                            f"max |entry| {np.max(np.abs(mat)):.3g})") from exc
    order = np.argsort(vals, kind="stable")[::-1]
    vals, vecs = vals[order], vecs[:, order]
    # sign convention: largest-magnitude entry of each column positive
    pivots = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[pivots, np.arange(n)])
    degenerate = False
    if k < n:
        scale = max(1.0, abs(vals[k - 1]))
        if abs(vals[k - 1] - vals[k]) <= 1e-12 * scale:
            degenerate = True
            warnings.warn(f"eigenvalue {vals[k - 1]:.6g} has multiplicity across position k={k}; "
                          "basis direction is arbitrary", DegenerateSpectrumWarning, stacklevel=2)
    bulk = float(np.median(vals[k:])) if k < n else math.nan
    return SubspaceEstimate(vecs[:, :k].copy(), vals[:k].copy(), bulk, degenerate)


def subspace_alignment(estimate, ws):
    """``||w_i - P_U w_i||`` for every regressor (uses ground truth)."""
    basis = estimate.basis if isinstance(estimate, SubspaceEstimate) else np.asarray(estimate)
    vecs = ws.vectors if hasattr(ws, "vectors") else np.atleast_2d(ws)
    if vecs.shape[1] != basis.shape[0]:
        raise ValueError(f"dimension mismatch: regressors in R^{vecs.shape[1]}, basis in R^{basis.shape[0]}")
    resid = vecs - (vecs @ basis) @ basis.T
    return np.linalg.norm(resid, axis=1)


def save_basis_csv(estimate, path):
    k = estimate.basis.shape[1]
    np.savetxt(path, estimate.basis, delimiter=",", fmt="%.17g",
               header=",".join(f"u{j + 1}" for j in range(k)), comments="# ")
