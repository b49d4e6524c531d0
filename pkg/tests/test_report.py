"""Orchestration, CLI, and output-contract tests."""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np
import pytest

from blockedcv.anova import SETTING, estimate_setting_means, fit_anova, rank_settings
from blockedcv.design import BCV, BCV_X0, RCV, err_table_from_csv
from blockedcv.errors import ConfigError, DesignError
from blockedcv.report import (
    bcv_shape_ladder,
    curve_tables_for,
    curve_to_csv,
    load_config,
    main,
    parse_config,
    run,
    stderr_curve,
)
from blockedcv.simcheck import SyntheticModel, simulate_table

from conftest import write_classification_csv


def small_config(tmp_path, threads=1, **extra):
    csv_path = write_classification_csv(tmp_path / "data.csv", n=48, p=4, seed=21)
    doc = {
        "dataset": {"path": str(csv_path), "target": "label", "task": "classification",
                    "name": "demo"},
        "learner": {"kind": "random_forest",
                    "params": {"num.trees": 8, "min.node.size": 3}},
        "grid": {"params": {"mtry": [1, 2], "sample.fraction": [0.7, 1.0]}},
        "strategy": {"folds": 3, "sampling": "SRS"},
        "designs": [
            {"variant": "BCV", "cv_seed_count": 2, "learner_seed_count": 2},
            {"variant": "RCV", "reps": 4},
        ],
        "master_seed": 99,
        "permutations": {"B": 49},
        "threads": threads,
        "output_dir": str(tmp_path / "out"),
    }
    doc.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_shape_ladder_matches_run_counts():
    ladder = bcv_shape_ladder(4, 4)
    assert ladder == [(2, 2), (3, 2), (4, 2), (3, 3), (4, 3), (4, 4)]
    assert [y * z for y, z in ladder] == [4, 6, 8, 9, 12, 16]
    assert bcv_shape_ladder(2, 2) == [(2, 2)]


def test_full_run_outputs(tmp_path):
    config = load_config(str(small_config(tmp_path)))
    written = run(config)
    names = sorted(os.path.basename(p) for p in written)
    assert names == [
        "anova_3-BCV_SRS_2x2.csv",
        "anova_3-RCV_SRS_4Rep.csv",
        "best_settings.csv",
        "err_table_3-BCV_SRS_2x2.csv",
        "err_table_3-RCV_SRS_4Rep.csv",
        "run_manifest.json",
        "stderr_curve.csv",
    ]
    out = tmp_path / "out"
    with open(out / "anova_3-BCV_SRS_2x2.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["term", "df", "SSE", "MSE", "p_value"]
    assert rows[-1][0] == "Residuals"
    terms = [r[0] for r in rows[1:]]
    assert terms[0] == "CVseeds" and "RFseeds" in terms
    for r in rows[1:-1]:
        p = float(r[4])
        assert 1 / 50 <= p <= 1.0

    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["grid_size"] == 4
    assert set(manifest["outputs"]) == set(names) - {"run_manifest.json"}
    assert manifest["config"]["designs"][0]["cv_seeds"]


def test_dry_run_prints_counts(tmp_path, capsys):
    path = small_config(tmp_path)
    assert main(["--config", str(path), "--dry-run"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "grid: 4 settings"
    assert "3-BCV SRS 2x2: 4 settings x 4 runs = 16 cells (48 model fits)" in lines
    assert "3-RCV SRS 4Rep: 4 settings x 4 runs = 16 cells (48 model fits)" in lines


def test_dry_run_standard_grid_counts(tmp_path, capsys):
    csv_path = write_classification_csv(tmp_path / "d.csv", n=40, p=21, seed=2)
    doc = {
        "dataset": {"path": str(csv_path), "target": "label", "task": "classification"},
        "grid": {"params": {"mtry": [5, 10, 20], "min.node.size": [3, 5, 10, 15],
                            "replace": [True, False],
                            "sample.fraction": [0.5, 0.7, 0.9, 1.0]},
                 "exclude": [{"replace": False, "sample.fraction": 1.0}]},
        "strategy": {"folds": 5},
        "designs": [{"variant": "BCV", "cv_seed_count": 4, "learner_seed_count": 4}],
    }
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(doc))
    assert main(["--config", str(path), "--dry-run"]) == 0
    out = capsys.readouterr().out
    assert "grid: 84 settings" in out
    assert "84 settings x 16 runs = 1344 cells" in out


def _read_all(out_dir):
    data = {}
    for name in sorted(os.listdir(out_dir)):
        if name.endswith(".csv"):
            data[name] = (out_dir / name).read_bytes()
    return data


def test_rerun_and_thread_count_byte_identical(tmp_path):
    path = small_config(tmp_path)
    base = None
    for threads in (1, 4, 8):
        cfg = load_config(str(path))
        from dataclasses import replace

        cfg = replace(cfg, threads=threads, out_dir=str(tmp_path / f"out{threads}"))
        run(cfg)
        got = _read_all(tmp_path / f"out{threads}")
        if base is None:
            base = got
        else:
            assert got == base
    # plain rerun into a fresh directory is also identical
    cfg = replace(load_config(str(path)), out_dir=str(tmp_path / "out_again"))
    run(cfg)
    assert _read_all(tmp_path / "out_again") == base


def test_reports_recomputable_from_err_table(tmp_path):
    config = load_config(str(small_config(tmp_path)))
    run(config)
    out = tmp_path / "out"
    table = err_table_from_csv(str(out / "err_table_3-BCV_SRS_2x2.csv"))
    sm = estimate_setting_means(table)
    order = rank_settings(sm)

    with open(out / "best_settings.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["design"] == "3-BCV SRS 2x2"]
    assert [int(r["setting_index"]) for r in rows] == order[: len(rows)]
    for rank, row in enumerate(rows):
        assert float(row["mean_err"]) == pytest.approx(sm.means[order[rank]], rel=1e-12)
        assert float(row["std_err"]) == pytest.approx(sm.std_err, rel=1e-12)

    # the manifest records the fitted model; refit it from the table alone
    from blockedcv.anova import ModelSpec

    manifest = json.loads((out / "run_manifest.json").read_text())
    spec = next(d["model"] for d in manifest["designs"] if d["notation"] == "3-BCV SRS 2x2")
    fit = fit_anova(table, ModelSpec(tuple(spec["random"]), tuple(spec["fixed"])))
    with open(out / "anova_3-BCV_SRS_2x2.csv") as fh:
        arows = {r["term"]: r for r in csv.DictReader(fh)}
    assert set(arows) == set(t.name for t in fit.terms.values()) | {"Residuals"}
    for name, df, sse, mse in fit.rows():
        assert int(arows[name]["df"]) == df
        assert float(arows[name]["SSE"]) == pytest.approx(sse, rel=1e-12)


def test_rerun_from_manifest_reproduces_outputs(tmp_path):
    # The manifest's resolved config (explicit seed lists) must reproduce
    # every CSV byte for byte.
    config = load_config(str(small_config(tmp_path)))
    run(config)
    out = tmp_path / "out"
    manifest = json.loads((out / "run_manifest.json").read_text())
    doc = manifest["config"]
    doc["output_dir"] = str(tmp_path / "out_from_manifest")
    path = tmp_path / "from_manifest.json"
    path.write_text(json.dumps(doc))
    run(load_config(str(path)))
    assert _read_all(tmp_path / "out_from_manifest") == _read_all(out)


def test_failure_removes_partial_outputs(tmp_path, monkeypatch):
    config = load_config(str(small_config(tmp_path)))
    out_dir = tmp_path / "out"

    import blockedcv.report as report_mod

    real = report_mod.write_best_settings_csv

    def boom(*args, **kwargs):
        raise RuntimeError("disk full")

    monkeypatch.setattr(report_mod, "write_best_settings_csv", boom)
    with pytest.raises(RuntimeError):
        run(config)
    monkeypatch.setattr(report_mod, "write_best_settings_csv", real)
    assert not [p for p in os.listdir(out_dir)] if out_dir.exists() else True


def test_cli_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "missing.json"
    assert main(["--config", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err


def test_cli_env_threads(tmp_path, monkeypatch, capsys):
    path = small_config(tmp_path)
    monkeypatch.setenv("BCV_THREADS", "2")
    assert main(["--config", str(path), "--dry-run"]) == 0


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="missing required key"):
        parse_config({"dataset": {"path": "x", "target": "y", "task": "classification"}})
    with pytest.raises(ConfigError, match="at least one design"):
        parse_config({
            "dataset": {"path": "x", "target": "y", "task": "classification"},
            "grid": {"params": {"a": [1]}},
            "strategy": {"folds": 3},
            "designs": [],
        })


# ---------------------------------------------------------------------------
# Standard-error curves


def sim_model(seed=0, **kw):
    args = dict(grand_mean=0.3,
                setting_effects=(-0.02, -0.01, 0.0, 0.01, 0.02),
                partition_sd=0.06, learner_sd=0.02, resid_sd=0.04, seed=seed)
    args.update(kw)
    return SyntheticModel(**args)


def test_stderr_curve_from_synthetic_family():
    model = sim_model(1)
    big = simulate_table(model, BCV, 4, 4)
    tables = [big.subset_blocks(y, z) for y, z in bcv_shape_ladder(4, 4)]
    tables.append(simulate_table(model, RCV, 16))
    curve = stderr_curve(tables)
    bcv_points = curve.families["BCV"]
    assert [p.runs for p in bcv_points] == [4, 6, 8, 9, 12, 16]
    assert curve.families["RCV"][0].runs == 16
    assert curve.min_rcv_std_err == curve.families["RCV"][0].std_err
    # blocked std.err at 16 runs beats repeated std.err at 16 runs here
    assert bcv_points[-1].std_err < curve.min_rcv_std_err


def test_stderr_curve_rejects_non_nested():
    model = sim_model(2)
    t_a = simulate_table(model, BCV, 3, 3, table_seed=10)
    t_b = simulate_table(model, BCV, 2, 2, table_seed=11)  # unrelated draws
    # force distinguishable seed labels so nesting is checkable
    t_a.cv_seed.setflags(write=True)
    t_b.cv_seed.setflags(write=True)
    t_a.cv_seed[:] = (t_a.block_i + 100).astype(np.uint64)
    t_b.cv_seed[:] = (t_b.block_i + 200).astype(np.uint64)
    with pytest.raises(DesignError, match="non-nested"):
        stderr_curve([t_a, t_b])


def test_curve_tables_for_rcv_ladder():
    model = sim_model(3)
    t = simulate_table(model, RCV, 16)
    runs = [x.runs_per_setting for x in curve_tables_for(t)]
    assert runs == [4, 6, 8, 9, 12, 16]
    t10 = simulate_table(model, RCV, 10)
    assert [x.runs_per_setting for x in curve_tables_for(t10)] == [4, 6, 8, 9, 10]


def test_curve_csv_layout(tmp_path):
    model = sim_model(4)
    big = simulate_table(model, BCV, 3, 2)
    curve = stderr_curve(curve_tables_for(big))
    path = tmp_path / "curve.csv"
    curve_to_csv(curve, str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "family,shape,runs,std_err,min_rcv_std_err"
    assert [ln.split(",")[1] for ln in lines[1:]] == ["2x2", "3x2"]


def test_per_setting_curve_flag():
    model = sim_model(5)
    t = simulate_table(model, BCV, 3, 3)
    curve = stderr_curve([t], per_setting=True)
    pt = curve.families["BCV"][0]
    assert pt.per_setting is not None and len(pt.per_setting) == 5
    assert all(v >= 0 for v in pt.per_setting)


def test_sqrt_n_decay_slope():
    # pooled over several simulated tables per shape, the log-log slope of
    # std.err vs run count approaches -1/2
    model = sim_model(6, partition_sd=0.05, learner_sd=0.03, resid_sd=0.2)
    shapes = bcv_shape_ladder(4, 4)
    runs = np.array([y * z for y, z in shapes], dtype=float)
    avg = np.zeros(len(shapes))
    n_reps = 120
    for rep in range(n_reps):
        big = simulate_table(model, BCV, 4, 4, table_seed=rep)
        for s_idx, (y, z) in enumerate(shapes):
            sm = estimate_setting_means(big.subset_blocks(y, z))
            avg[s_idx] += sm.std_err
    avg /= n_reps
    slope = np.polyfit(np.log(runs), np.log(avg), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.05)
