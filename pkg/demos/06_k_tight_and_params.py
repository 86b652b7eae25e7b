"""How often one regressor is observed as k grows, and what theory-mode parameters cost.

Run: python demos/06_k_tight_and_params.py
"""

from lrssb.harness import k_tight_experiment, param_report
from lrssb.model import ProblemParams

print("k, frequency regressor 0 attains the max, std error")
for k, freq, se in k_tight_experiment(bound_b=3.0, delta=1.0, k_list=[2, 4, 8, 16, 32], m=200_000):
    print(f"{k:>3}  {freq:.5f}  {se:.5f}")

print()
text, _ = param_report(ProblemParams(n=6, k=2, delta=1.0, bound_b=2.0, epsilon=0.3, lam=0.01))
print(text)
