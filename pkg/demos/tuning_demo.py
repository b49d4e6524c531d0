"""End-to-end tuning walkthrough.

Builds a small classification CSV, runs the same hyperparameter grid under
a fully blocked design (shared partition and learner seeds) and under
plain repeated CV, then compares the two analyses: setting means, standard
errors, and the ANOVA table with permutation p-values.

Run:  python3 demos/tuning_demo.py
"""

import csv
import tempfile
import time
from pathlib import Path

import numpy as np

import blockedcv as bc

# ---------------------------------------------------------------------------
# 1. A dataset. 120 instances, 8 numeric features, binary target with a
#    nonlinear signal plus 10% label noise.

rng = np.random.default_rng(7)
n, p = 120, 8
X = rng.normal(size=(n, p))
logit = 1.3 * X[:, 0] - 0.9 * X[:, 1] + 0.8 * X[:, 2] * X[:, 3]
y = (logit > 0).astype(int)
flip = rng.random(n) < 0.10
y[flip] = 1 - y[flip]

tmp = Path(tempfile.mkdtemp())
csv_path = tmp / "demo.csv"
with open(csv_path, "w", newline="") as fh:
    writer = csv.writer(fh)
    writer.writerow([f"f{j}" for j in range(p)] + ["label"])
    for i in range(n):
        writer.writerow([repr(float(v)) for v in X[i]] + ["pos" if y[i] else "neg"])

dataset = bc.load_csv(str(csv_path), "label", bc.CLASSIFICATION, name="demo")
print(f"dataset: {dataset.n_rows} rows, {dataset.n_features} features, "
      f"labels {dataset.target_levels}")

# ---------------------------------------------------------------------------
# 2. The grid. 2 x 2 x 2 = 8 settings; dotted names are the learner's
#    hyperparameter vocabulary.

grid = bc.build_grid({
    "mtry": [2, 5],
    "min.node.size": [3, 10],
    "sample.fraction": [0.6, 0.9],
})
print(f"grid: {grid.size} settings over {grid.param_names}")

learner = bc.LearnerSpec("random_forest", {"num.trees": 60, "replace": True})
loss = bc.default_loss(dataset.task)
strategy = bc.PartitionStrategy(k=5, sampling=bc.SRS)

# ---------------------------------------------------------------------------
# 3. Two designs with the same budget of 16 runs per setting: blocked
#    4x4 (4 partition seeds x 4 learner seeds, shared by all settings)
#    versus 16 free repetitions.

bcv_plan = bc.DesignPlan.bcv(strategy, n_cv=4, n_learner=4, master_seed=2024)
rcv_plan = bc.DesignPlan.rcv(strategy, n_reps=16, master_seed=2025)

for plan in (bcv_plan, rcv_plan):
    t0 = time.time()
    table = bc.run_design(dataset, grid, plan, learner, loss, threads=2)
    means = bc.estimate_setting_means(table)
    order = bc.rank_settings(means)
    print(f"\n=== {plan.notation()}  ({table.n_records} cells, "
          f"{time.time() - t0:.1f}s) ===")
    print(f"std.err of a setting mean: {means.std_err:.5f}")
    print("top 3 settings:")
    for m in order[:3]:
        print(f"  #{m} {grid.settings[m].params}  mean err {means.means[m]:.4f}")

    # ANOVA with permutation p-values. The blocked table supports the
    # partition/learner block terms; the repeated table only the settings.
    # On this complete factorial grid the fixed side can be decomposed
    # into per-hyperparameter effects.
    if plan.variant == bc.BCV:
        model_spec = bc.ModelSpec(
            random_terms=(bc.CV_SEEDS, bc.RF_SEEDS),
            fixed_terms=("mtry", "min.node.size", "sample.fraction"),
        )
    else:
        model_spec = bc.default_model(table)
    fit = bc.fit_anova(table, model_spec)
    perms = bc.permutation_test(fit, bc.PermutationPlan(n_permutations=999, seed=11))
    print("term            df      SSE        MSE     p")
    for name, df, sse, mse in fit.rows():
        if name == "Residuals":
            print(f"{name:<14} {df:>4} {sse:>9.5f} {mse:>9.6f}")
        else:
            p_str = bc.format_p_value(perms.p_value(name), 999)
            print(f"{name:<14} {df:>4} {sse:>9.5f} {mse:>9.6f}  {p_str}")

print("\nThe blocked design reaches a smaller standard error at the same "
      "number of runs: partition and learner noise cancel out of every "
      "between-setting comparison instead of inflating the residual.")
