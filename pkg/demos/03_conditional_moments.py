"""Localized conditional moments of a candidate, checked against an independent oracle.

Near a true regressor the conditional mean of ``z - v @ x`` is close to zero
and the positive-part second moment approaches half the noise variance.

Run: python demos/03_conditional_moments.py
"""

import numpy as np

from lrssb.model import NoiseSpec, generate, orthogonal_regressors
from lrssb.moments import LocalizationEvent, conditional_stats, event_probability_analytic
from lrssb.oracles import monte_carlo_conditional_oracle

ws = orthogonal_regressors(n=3, k=2, norm=1.5, delta=1.0, bound_b=2.0)
noise = NoiseSpec.gaussian(0.3, 2)
batch = generate(ws, noise, 1_000_000, seed=2)

for label, v in (("truth", ws.vectors[0]), ("shrunk", 0.8 * ws.vectors[0]),
                 ("rotated", np.array([1.2, 0.9, 0.0]))):
    event = LocalizationEvent.for_vector(v, t=1.0, k=2, delta=0.1)
    cs = conditional_stats(batch, v, event)
    orc = monte_carlo_conditional_oracle(ws, noise, v, event, trials=500_000, seed=3)
    print(f"{label:>8}: P(event)={event_probability_analytic(event):.4f} count={cs.count:>6} "
          f"m1={cs.m1:+.4f} (oracle {orc.m1:+.4f})  m2+={cs.m2_plus:.4f} (oracle {orc.m2_plus:.4f})")
print(f"half the noise variance: {0.3 ** 2 / 2:.4f}")
