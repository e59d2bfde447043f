"""True coverage-error curves and optimal thresholds for the built-in
generators.

The curve is the probability, in the target population, that the true
label's score falls below each threshold; the optimal threshold is the
0.05-quantile of target scores.  Useful for judging how much room each
generator leaves between grid points.
"""

import numpy as np

import shiftset as ss

grid = ss.ThresholdGrid.from_range(0.0, 0.3, 0.05)
rng = ss.RngStream(2024)

for kind in ("highdim-sparse", "lowdim", "lowdim-noshift"):
    spec = ss.DgpSpec(kind)
    curve = ss.oracle_psi_curve(spec, list(grid), 200_000,
                                rng.child(f"curve-{kind}"))
    tau0 = ss.oracle_tau0(spec, 0.05, 200_000, rng.child(f"tau0-{kind}"))
    print(f"\n=== {kind} ===")
    print("tau   :", "  ".join(f"{t:5.2f}" for t in grid))
    print("error :", "  ".join(f"{v:5.3f}" for v in curve))
    print(f"optimal threshold (error = 0.05): {tau0:.4f}")
    feasible = [t for t, v in zip(grid, curve) if v <= 0.05]
    print(f"largest safe grid point: {max(feasible):.2f}")

# The high-dimensional generator shifts the two exponential covariates, so
# thresholds tuned on the source population overshoot in the target:
spec = ss.DgpSpec("highdim-sparse")
gen = ss.RngStream(5).child("swap").generator()
for a, name in ((1, "source"), (0, "target")):
    X = spec.draw_x(200_000, np.full(200_000, a), gen)
    probs = spec.label_probs(X)
    u = gen.uniform(size=200_000)
    y = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    q = np.quantile(spec.score_table(X)[np.arange(200_000), y], 0.05)
    print(f"0.05-quantile of scores in the {name} population: {q:.4f}")
