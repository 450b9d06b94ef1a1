"""
Mislabeled data, with and without the stability constraint.

Both controllers are trained on the same corrupted dataset: the aligned
centered scan is dropped and a scan that should turn right is labelled
"forward".  C1 is a plain subgradient SVM; C2 projects the two classifiers
that decide between driving and turning onto their certifiable sets.  Each
controller is then flown in the nonlinear corridor simulator from ten
seeded starts.

Takes about a minute.  Run with ``python3 demos/corridor_comparison.py``.
"""

import warnings

from cilsynth import experiment as ex
from cilsynth.cli import verify_bank

cfg = ex.load_config(environ={})
clean = ex.dataset(cfg, mislabel=False)
bad = ex.dataset(cfg, mislabel=True)
mmap = ex.measurement_map(cfg, clean)
print(f"{len(bad)} training scans of {bad.m} ranges; map residual {mmap.residual_rms:.3f}")

with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    c1 = ex.train(cfg, bad, constrained=False, mmap=mmap)
    c2 = ex.train(cfg, bad, constrained=True, mmap=mmap)

for pair, res in sorted(c2.projections.items()):
    print(f"w{pair}: projection {'certified' if res.success else 'failed'}, slack {res.slack_l1:.1e}")
print("embedded witnesses verify:", verify_bank(c2.bank)["ok"])

print("\n start (psi, d)    C1                     C2")
runs1 = ex.simulate_bank(cfg, c1.bank)
runs2 = ex.simulate_bank(cfg, c2.bank)


def outcome(s):
    if s["crash"]:
        return "crash"
    if s["oscillation"]:
        return f"oscillates ({s['switches']} switches)"
    if s["converged"]:
        return f"settles at {s['entry_time']:.1f} s"
    return f"drifts (dist {s['final_distance']:.2f})"


for (_, s1), (_, s2) in zip(runs1, runs2):
    psi, d = s1["x0"]
    print(f" ({psi:+.2f}, {d:+.2f})    {outcome(s1):<22} {outcome(s2)}")
