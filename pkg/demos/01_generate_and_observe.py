"""Draw samples from the hidden max model and see how often each regressor wins.

Run: python demos/01_generate_and_observe.py
"""

import numpy as np

from lrssb.model import NoiseSpec, generate, observation_frequency, orthogonal_regressors, validate_regressors

ws = orthogonal_regressors(n=6, k=3, norm=1.5, delta=1.0, bound_b=2.0)
print("regressors valid:", not validate_regressors(ws))

batch = generate(ws, NoiseSpec.gaussian(0.3, 3), m=200_000, seed=0)
print(f"{batch.m} samples in R^{batch.n}; z ranges over [{batch.zs.min():.2f}, {batch.zs.max():.2f}]")
for i in range(ws.k):
    print(f"regressor {i} attains the max in {observation_frequency(batch, i):.3f} of samples")

# shared noise gives the max-linear model: z = max_j x @ w_j + eta
shared = generate(ws, NoiseSpec.shared("gaussian", 0.3, 3), m=200_000, seed=0)
resid = shared.zs - np.max(shared.xs @ ws.vectors.T, axis=1)
print(f"max-linear residual std {resid.std():.3f} (noise scale 0.3)")
