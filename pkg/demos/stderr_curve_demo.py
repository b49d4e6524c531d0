"""Standard error of the setting means versus number of runs.

One maximal blocked table is simulated; every smaller blocked shape is an
exact sub-table of it (cells only depend on their own seeds), so the whole
curve costs a single table per design family. The repeated-CV curve and
its minimum act as the reference level.

Run:  python3 demos/stderr_curve_demo.py
"""

import numpy as np

import blockedcv as bc
from blockedcv.report import bcv_shape_ladder, curve_tables_for, curve_to_csv, stderr_curve

tau = np.linspace(-0.02, 0.02, 10)
model = bc.SyntheticModel(
    grand_mean=0.25,
    setting_effects=tuple(tau - tau.mean()),
    partition_sd=0.06,
    learner_sd=0.02,
    resid_sd=0.12,
    seed=9,
)

big_bcv = bc.simulate_table(model, bc.BCV, 4, 4)
big_x0 = bc.simulate_table(model, bc.BCV_X0, 16)
big_rcv = bc.simulate_table(model, bc.RCV, 16)

tables = (
    curve_tables_for(big_bcv) + curve_tables_for(big_x0) + curve_tables_for(big_rcv)
)
curve = stderr_curve(tables)

print(f"{'family':<8} {'shape':<7} {'runs':>4} {'std.err':>9}")
for family in ("BCV", "BCV_x0", "RCV"):
    for pt in curve.families[family]:
        print(f"{family:<8} {pt.shape:<7} {pt.runs:>4} {pt.std_err:>9.5f}")
print(f"minimum repeated-CV std.err: {curve.min_rcv_std_err:.5f}")

curve_to_csv(curve, "stderr_curve_demo.csv")
print("wrote stderr_curve_demo.csv (plot-ready)")

# ---------------------------------------------------------------------------
# The curves decay like 1/sqrt(runs); check the log-log slope on the
# blocked family, averaged over replications to tame Monte Carlo noise.

shapes = bcv_shape_ladder(4, 4)
runs = np.array([y * z for y, z in shapes], float)
avg = np.zeros(len(shapes))
n_reps = 150
for rep in range(n_reps):
    table = bc.simulate_table(model, bc.BCV, 4, 4, table_seed=rep)
    for idx, (y, z) in enumerate(shapes):
        avg[idx] += bc.estimate_setting_means(table.subset_blocks(y, z)).std_err
avg /= n_reps
slope = np.polyfit(np.log(runs), np.log(avg), 1)[0]
print(f"\nblocked-curve log-log slope over {n_reps} replications: {slope:.3f} "
      "(expected -0.5)")
