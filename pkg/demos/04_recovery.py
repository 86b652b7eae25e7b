"""End-to-end recovery in practical mode, scored against the hidden regressors.

Run: python demos/04_recovery.py
"""

import json
import warnings
from pathlib import Path

from lrssb.model import NoiseSpec, ProblemParams, RegimeWarning, generate, orthogonal_regressors
from lrssb.oracles import matched_error
from lrssb.recovery import RecoveryConfig, recover

# eps = 0.3 is far outside the guarantee regime; practical mode does not rely on it
warnings.simplefilter("ignore", RegimeWarning)

fx = json.loads((Path(__file__).parents[1] / "tests" / "fixtures" / "ac5_practical.json").read_text())
fx = {**fx, **fx["variants"]["gaussian"]}
ws = orthogonal_regressors(fx["n"], 2, fx["norm"], 1.0, 2.0)
problem = ProblemParams(fx["n"], 2, 1.0, 2.0, fx["epsilon"])
config = RecoveryConfig(t=fx["t"], gamma=fx["gamma"], delta=fx["delta"],
                        net_resolution=fx["net_resolution"], count_floor=fx["count_floor"])

batch = generate(ws, NoiseSpec.gaussian(fx["sigma"], 2), fx["m"], seed=0)
rep = recover(batch, problem, config=config)
print(f"net of {rep.net_size} candidates, {rep.survivors_after_filter} pass the first-moment filter")
for it in rep.iterations:
    print(f"  iteration {it.iteration}: picked candidate {it.selected_index} (m2 {it.m2:.4f}), "
          f"pruned {len(it.deleted_by_ball)} by the ball and {len(it.deleted_by_projection)} by projection")
me = matched_error(rep.estimates, ws)
print(f"matched max error {me.max_error:.3f} (target {fx['epsilon']}), per pair {me.per_pair_errors.round(3)}")
print("stage timings (ms):", {k: round(v) for k, v in rep.timings_ms.items()})
