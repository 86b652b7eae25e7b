"""Polish a recovered warm start with alternating minimization (max-linear model).

Run: python demos/05_refine.py
"""

import numpy as np

from lrssb.model import NoiseSpec, generate, orthogonal_regressors
from lrssb.oracles import matched_error
from lrssb.refine import refine

ws = orthogonal_regressors(n=6, k=2, norm=1.5, delta=1.0, bound_b=2.0)
batch = generate(ws, NoiseSpec.shared("gaussian", 0.3, 2), 500_000, seed=4)

rng = np.random.default_rng(5)
warm = ws.vectors + rng.normal(scale=0.15, size=ws.vectors.shape)  # stand-in for a recovery output
trace = []
state = refine(batch, warm, trace=trace)
for s in trace:
    print(f"iter {s.iteration}: residual rms {s.residual_rms:.4f}, clusters {s.cluster_sizes}")
print(f"converged={state.converged}; matched error {matched_error(warm, ws).max_error:.3f} -> "
      f"{matched_error(state.estimates, ws).max_error:.4f}")
