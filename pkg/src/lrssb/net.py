"""Finite covering nets of an annulus inside an estimated subspace.

Points come from the cubic lattice ``h Z^k`` with ``h = r / sqrt(k)`` in
subspace coordinates. Lattice points whose norm falls within one cell
diagonal of ``[Delta, B]`` are kept and radially clipped onto the annulus,
which is the metric projection onto it. Any annulus point is within ``r/2``
of a lattice point, hence within ``r`` of its clipped image.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class NetTooLarge(RuntimeError):
    def __init__(self, estimate, cap):
        super().__init__(f"net would hold ~{estimate:.3g} points (cap {cap:.3g}); "
                         "coarsen the resolution or reduce k")
        self.estimate = estimate
        self.cap = cap


@dataclass(frozen=True, eq=False)
class CandidateNet:
    points: np.ndarray  # (N, n) in ambient coordinates
    coords: np.ndarray  # (N, k) in subspace coordinates
    resolution: float
    basis: np.ndarray  # (n, k), orthonormal columns

    def __len__(self):
        return self.points.shape[0]

    @property
    def norms(self):
        return np.linalg.norm(self.coords, axis=1)


def _ball_volume(k, radius):
    return math.pi ** (k / 2) / special.gamma(k / 2 + 1) * radius**k


def estimate_net_size(k, delta, bound_b, resolution):
    """Volume estimate of the lattice count, without materializing anything."""
    h = resolution / math.sqrt(k)
    outer = bound_b + resolution
    inner = max(delta - resolution, 0.0)
    return (_ball_volume(k, outer) - _ball_volume(k, inner)) / h**k


def net_size_bound(k, bound_b, resolution, c=5.0):
    """Explicit ``(c B sqrt(k) / r)^k`` ceiling for the lattice construction."""
    return (c * bound_b * math.sqrt(k) / resolution) ** k


def build_net(subspace, delta, bound_b, resolution, max_points=10**7):
    """Lattice net of ``{v in span(basis): delta <= ||v|| <= bound_b}`` with covering radius <= resolution."""
    basis = subspace.basis if hasattr(subspace, "basis") else np.asarray(subspace, dtype=float)
    k = basis.shape[1]
    if not 0 < resolution < delta:
        raise ValueError(f"need 0 < resolution < delta, got resolution={resolution}, delta={delta}")
    if delta > bound_b:
        raise ValueError("need delta <= bound_b")
    est = estimate_net_size(k, delta, bound_b, resolution)
    if est > max_points:
        raise NetTooLarge(est, max_points)

    h = resolution / math.sqrt(k)
    lo, hi = delta - resolution, bound_b + resolution
    reach = int(math.floor(hi / h))
    axis = np.arange(-reach, reach + 1)
    rest = (np.stack(np.meshgrid(*([axis] * (k - 1)), indexing="ij"), axis=-1).reshape(-1, k - 1)
            if k > 1 else np.zeros((1, 0), dtype=int))
    slabs = []
    for lead in axis:  # one slab per leading index keeps lexicographic order
        idx = np.column_stack([np.full(rest.shape[0], lead), rest])
        pts = idx * h
        r = np.linalg.norm(pts, axis=1)
        keep = (r >= lo) & (r <= hi) & (r > 0)
        pts, r = pts[keep], r[keep]
        target = np.clip(r, delta, bound_b)
        slabs.append(pts * (target / r)[:, None])
    coords = np.concatenate(slabs) if slabs else np.zeros((0, k))
    # clipping can map distinct lattice points onto one annulus point; keep the first
    _, first = np.unique(np.round(coords, 12), axis=0, return_index=True)
    coords = coords[np.sort(first)]
    return CandidateNet(coords @ basis.T, coords, float(resolution), basis)


def save_net_csv(net, path):
    n = net.points.shape[1]
    np.savetxt(path, net.points, delimiter=",", fmt="%.17g",
               header=",".join(f"v{j + 1}" for j in range(n)), comments="# ")
