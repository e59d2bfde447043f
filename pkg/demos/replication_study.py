"""Desk-scale replication study comparing all seven methods.

Runs a small version of the simulation benchmark (the full runs use 200
replications) and prints, per method, how often the selected set's true
coverage error stayed below the requested level, with a Wilson interval.
"""

import shiftset as ss

REPS = 40
N = 1000

cfg = ss.StudyConfig(
    grid=ss.ThresholdGrid.from_range(0.0, 0.3, 0.05),
    targets=ss.RiskTargets(alpha_error=0.05, alpha_conf=0.05),
    oracle_m=50_000,
)

for kind in ("highdim-sparse", "lowdim", "lowdim-noshift"):
    print(f"\n=== {kind}, n={N}, {REPS} replications ===")
    report = ss.run_study(
        ss.DgpSpec(kind), [N],
        ["onestep", "tmle", "rs", "plugin", "wplugin", "icp", "wcp"],
        REPS, cfg, ss.RngStream(101))
    print(f"{'method':>8} {'coverage ok':>12} {'wilson 95%':>18} "
          f"{'median tau':>11} {'failures':>9}")
    for agg in report.aggregates:
        print(f"{agg.method:>8} {agg.proportion:12.3f} "
              f"[{agg.wilson_lo:.3f}, {agg.wilson_hi:.3f}]   "
              f"{agg.tau_median:11.3f} {agg.failures:9d}")
