"""
Repair one classifier so that its closed loop is provably stable.

We take the corridor dataset, fit an unconstrained linear SVM for the pair
"forward vs. turn right" (labels 1 and 3), and then project its weights
onto the certifiable set around the equilibrium (psi, d) = (0, 0.25) on a
curve of curvature 1.  The projection alternates between two linear
programs; its objective (l1 slack plus the weighted distance to the start)
never increases.

Run with ``python3 demos/project_one_classifier.py``.
"""

import warnings

import numpy as np

from cilsynth import experiment as ex
from cilsynth.certificate import verify_certificate
from cilsynth.projection import project

cfg = ex.load_config(environ={})
data = ex.dataset(cfg, mislabel=True)
mmap = ex.measurement_map(cfg, data)
problem = ex.projection_problems(cfg, mmap)["13"]

with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    svm = ex.train(cfg, data, constrained=False).bank.pairs["13"]
w0 = svm.as_vector()
print(f"unconstrained w13: {w0.size} weights, |w| = {np.linalg.norm(w0):.3f}")

acs = ex.acs_config(cfg)
res = project(w0, acs, problem)
print("projection:", "certified" if res.success else "not certified",
      f"after {len(res.trace.objective) - 1} iterations, slack {res.slack_l1:.2e}")
print("objective trace:", " ".join(f"{v:.4g}" for v in res.trace.objective))
print(f"weights moved by {np.abs(res.w - w0).sum():.4f} in l1")

if res.success:
    rep = verify_certificate(res.system, res.lyap, res.witness, problem.index_sets())
    print("witness re-checked:", rep.feasible)
    g = problem.gradient @ res.w
    print("switching line direction in (psi, d):", np.round(g / np.linalg.norm(g), 4))
