"""Recover the span of the regressors from the weighted second moment.

Run: python demos/02_subspace.py
"""

from lrssb.model import NoiseSpec, generate, orthogonal_regressors
from lrssb.subspace import build_weighted_moment_matrix, extract_subspace, subspace_alignment

ws = orthogonal_regressors(n=20, k=2, norm=1.5, delta=1.0, bound_b=2.0)
for m in (10_000, 100_000, 1_000_000):
    batch = generate(ws, NoiseSpec.gaussian(0.3, 2), m, seed=1)
    est = extract_subspace(build_weighted_moment_matrix(batch), k=2)
    top = ", ".join(f"{v:.3f}" for v in est.eigenvalues[:3])
    print(f"m={m:>9}: top eigenvalues {top} (bulk {est.bulk_level:.3f}), "
          f"worst residual {subspace_alignment(est, ws).max():.4f}")
