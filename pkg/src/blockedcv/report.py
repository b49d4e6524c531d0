"""Run orchestration: JSON config in, CSV artifacts out.

A run executes one or more designs (sharing one dataset, grid and loss),
fits the per-design model, attaches permutation p-values, ranks settings,
and emits:

* ``err_table_<design>.csv``  - the raw error table (the source of truth;
  every number in the other files is recomputable from it),
* ``anova_<design>.csv``      - term, df, SSE, MSE, p_value,
* ``best_settings.csv``       - top-K settings per design,
* ``stderr_curve.csv``        - standard error vs number of runs, obtained
  by subsetting each design's table to nested sub-shapes,
* ``run_manifest.json``       - resolved seeds, versions, timings, output
  hashes; re-running the embedded config reproduces every CSV byte for
  byte.

The command line entry point is ``blockedcv``:

    blockedcv --config run.json [--out DIR] [--threads N] [--dry-run]
              [--seed N] [--perms B]

``BCV_THREADS`` is honored when --threads is not given. On failure the
exit code is nonzero and partially written outputs are removed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import __version__
from .anova import (
    SETTING,
    AnovaResult,
    ModelSpec,
    SettingMeans,
    default_model,
    estimate_setting_means,
    fit_anova,
    rank_settings,
)
from .data import load_csv
from .design import BCV, BCV_X0, RCV, DesignPlan, ErrTable, SettingGrid, build_grid, run_design
from .errors import BlockedCvError, ConfigError, DesignError, UnbalancedTableError
from .learner import LearnerSpec, LossFn, default_loss
from .partition import PartitionStrategy
from .permtest import PermutationPlan, PermutationResult, permutation_test
from .rng import derive_seed

_DOM_PERM_SEED = 0x80


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run: one dataset and loss, one or more designs."""

    dataset_path: str
    target_column: str
    task: str
    dataset_name: str
    loss: LossFn
    learner: LearnerSpec
    grid_params: dict[str, list[Any]]
    grid_exclusions: list[dict[str, Any]]
    strategy: PartitionStrategy
    designs: list[DesignPlan]
    master_seed: int
    n_permutations: int
    permutation_seed: int
    model_random: tuple[str, ...] | None  # None = auto
    model_fixed: tuple[str, ...] | None
    top_k: int = 2
    threads: int = 1
    out_dir: str = "."
    stderr_curve_enabled: bool = True
    stderr_curve_per_setting: bool = False

    def build_grid(self) -> SettingGrid:
        return build_grid(self.grid_params, list(self.grid_exclusions))


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return obj[key]


def parse_config(doc: dict[str, Any], base_dir: str = ".") -> RunConfig:
    """Validate and resolve a configuration document (see README schema)."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")

    ds = _require(doc, "dataset", "config")
    path = _require(ds, "path", "dataset")
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    task = _require(ds, "task", "dataset")

    loss_kind = doc.get("loss")
    loss = LossFn(loss_kind) if loss_kind else default_loss(task)

    learner_doc = doc.get("learner", {"kind": "random_forest", "params": {}})
    learner = LearnerSpec(learner_doc.get("kind", "random_forest"),
                          dict(learner_doc.get("params", {})))

    grid_doc = _require(doc, "grid", "config")
    grid_params = _require(grid_doc, "params", "grid")
    if not isinstance(grid_params, dict) or not grid_params:
        raise ConfigError("grid.params must be a non-empty object of name -> value list")
    exclusions = grid_doc.get("exclude", [])
    if not all(isinstance(e, dict) for e in exclusions):
        raise ConfigError("grid.exclude entries must be field-equality objects")

    strat_doc = _require(doc, "strategy", "config")
    strategy = PartitionStrategy(int(_require(strat_doc, "folds", "strategy")),
                                 strat_doc.get("sampling", "SRS"))

    master_seed = int(doc.get("master_seed", 0))
    designs_doc = _require(doc, "designs", "config")
    if not designs_doc:
        raise ConfigError("config needs at least one design")
    designs = [_parse_design(d, strategy, master_seed, idx) for idx, d in enumerate(designs_doc)]

    perm_doc = doc.get("permutations", {})
    n_perm = int(perm_doc.get("B", 4999))
    perm_seed = int(perm_doc.get("seed", derive_seed(master_seed, [_DOM_PERM_SEED])))

    model_doc = doc.get("model")
    model_random = model_fixed = None
    if model_doc is not None:
        model_random = tuple(model_doc.get("random", ()))
        model_fixed = tuple(model_doc.get("fixed", (SETTING,)))

    curve_doc = doc.get("stderr_curve", True)
    if isinstance(curve_doc, bool):
        curve_enabled, curve_per_setting = curve_doc, False
    else:
        curve_enabled = bool(curve_doc.get("enabled", True))
        curve_per_setting = bool(curve_doc.get("per_setting", False))

    return RunConfig(
        dataset_path=path,
        target_column=_require(ds, "target", "dataset"),
        task=task,
        dataset_name=ds.get("name", os.path.basename(path)),
        loss=loss,
        learner=learner,
        grid_params={k: list(v) for k, v in grid_params.items()},
        grid_exclusions=[dict(e) for e in exclusions],
        strategy=strategy,
        designs=designs,
        master_seed=master_seed,
        n_permutations=n_perm,
        permutation_seed=perm_seed,
        model_random=model_random,
        model_fixed=model_fixed,
        top_k=int(doc.get("top_k", 2)),
        threads=int(doc.get("threads", 1)),
        out_dir=doc.get("output_dir", "."),
        stderr_curve_enabled=curve_enabled,
        stderr_curve_per_setting=curve_per_setting,
    )


def _parse_design(doc: dict[str, Any], strategy: PartitionStrategy, master_seed: int, idx: int) -> DesignPlan:
    variant = str(_require(doc, "variant", f"designs[{idx}]")).lower().replace("-", "_")
    # Give each design its own derived master unless one is pinned, so two
    # RCV designs in one config do not share repetition seeds.
    design_master = int(doc.get("master_seed", derive_seed(master_seed, [0x90, idx])))
    if variant == BCV:
        return DesignPlan.bcv(
            strategy,
            n_cv=doc.get("cv_seed_count"),
            n_learner=doc.get("learner_seed_count"),
            cv_seeds=doc.get("cv_seeds"),
            learner_seeds=doc.get("learner_seeds"),
            master_seed=design_master,
        )
    if variant == BCV_X0:
        return DesignPlan.bcv_x0(
            strategy,
            n_cv=doc.get("cv_seed_count"),
            cv_seeds=doc.get("cv_seeds"),
            master_seed=design_master,
        )
    if variant == RCV:
        return DesignPlan.rcv(
            strategy,
            n_reps=int(_require(doc, "reps", f"designs[{idx}]")),
            master_seed=design_master,
            shared_within_rep=bool(doc.get("shared_within_rep", False)),
        )
    raise ConfigError(f"designs[{idx}]: unknown variant {variant!r}")


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc, base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# Standard-error curves


@dataclass(frozen=True)
class CurvePoint:
    shape: str
    runs: int
    std_err: float | None
    per_setting: tuple[float, ...] | None = None


@dataclass(frozen=True)
class StdErrCurve:
    """Std.err of the setting means vs run count, per design family."""

    families: dict[str, tuple[CurvePoint, ...]]
    min_rcv_std_err: float | None


def bcv_shape_ladder(n_cv: int, n_learner: int) -> list[tuple[int, int]]:
    """Nested sub-shapes of a fully blocked design, ordered by run count.

    For a 4x4 design this is 2x2, 3x2, 4x2, 3x3, 4x3, 4x4 (4, 6, 8, 9, 12
    and 16 runs)."""
    shapes = {(y, z) for y in range(2, n_cv + 1) for z in range(2, min(y, n_learner) + 1)}
    shapes.add((n_cv, n_learner))
    return sorted(shapes, key=lambda s: (s[0] * s[1], s[0]))


def _axis_seed_sequence(table: ErrTable, axis: int) -> tuple[int, ...]:
    coords = table.block_i if axis == 0 else table.block_j
    seeds = table.cv_seed if axis == 0 else table.learner_seed
    n = table.n_cv if axis == 0 else table.n_learner
    return tuple(int(seeds[np.flatnonzero(coords == level)[0]]) for level in range(n))


def _check_nested(tables: list[ErrTable], family: str) -> None:
    for axis in (0, 1):
        seqs = sorted((_axis_seed_sequence(t, axis) for t in tables), key=len)
        for shorter, longer in zip(seqs, seqs[1:]):
            if longer[: len(shorter)] != shorter:
                raise DesignError(
                    f"{family} tables have non-nested seed lists; larger shapes "
                    f"must extend smaller ones so the curve compares like with like"
                )


def _per_setting_std_errs(table: ErrTable, fit: AnovaResult) -> tuple[float, ...]:
    """Per-setting spread of the block-adjusted replication values."""
    from .permtest import block_residuals

    r = block_residuals(fit)
    cube = r.reshape(table.n_settings, table.runs_per_setting)
    R = table.runs_per_setting
    if R < 2:
        return tuple(float("nan") for _ in range(table.n_settings))
    var = cube.var(axis=1, ddof=1)
    return tuple(float(v) for v in np.sqrt(var / R))


def stderr_curve(tables: list[ErrTable], per_setting: bool = False) -> StdErrCurve:
    """One std.err point per table, grouped and validated per family.

    Within a family, larger tables must extend smaller ones (nested seed
    lists); run counts must be strictly increasing. The reported std.err
    is the pooled one from :func:`estimate_setting_means`, i.e. averaged
    over settings.
    """
    groups: dict[str, list[ErrTable]] = {}
    for t in tables:
        label = {BCV: "BCV", BCV_X0: "BCV_x0", RCV: "RCV"}[t.variant]
        groups.setdefault(label, []).append(t)

    families: dict[str, tuple[CurvePoint, ...]] = {}
    min_rcv: float | None = None
    for label, members in groups.items():
        _check_nested(members, label)
        members = sorted(members, key=lambda t: (t.runs_per_setting, t.n_cv))
        points = []
        last_runs = 0
        for t in members:
            runs = t.runs_per_setting
            if runs == last_runs:
                raise DesignError(f"{label} family has two tables with {runs} runs")
            last_runs = runs
            sm = estimate_setting_means(t)
            if t.variant == BCV:
                shape = f"{t.n_cv}x{t.n_learner}"
            elif t.variant == BCV_X0:
                shape = f"{t.n_cv}x0"
            else:
                shape = f"{t.n_cv}Rep"
            ps = _per_setting_std_errs(t, sm.fit) if per_setting else None
            points.append(CurvePoint(shape, runs, sm.std_err, ps))
            if t.variant == RCV and sm.std_err is not None:
                min_rcv = sm.std_err if min_rcv is None else min(min_rcv, sm.std_err)
        families[label] = tuple(points)
    return StdErrCurve(families, min_rcv)


def curve_tables_for(table: ErrTable) -> list[ErrTable]:
    """The nested sub-tables of one design used for its curve."""
    if table.variant == BCV and table.n_cv >= 2 and table.n_learner >= 2:
        return [table.subset_blocks(y, z) for y, z in bcv_shape_ladder(table.n_cv, table.n_learner)]
    if table.variant == BCV_X0 and table.n_cv >= 2:
        return [table.subset_blocks(y) for y in range(2, table.n_cv + 1)]
    if table.variant == RCV and table.n_cv >= 2:
        ladder = sorted({r for r in (4, 6, 8, 9, 12, 16) if r <= table.n_cv} | {table.n_cv})
        ladder = [r for r in ladder if r >= 2]
        return [table.subset_blocks(r) for r in ladder]
    return []


def curve_to_csv(curve: StdErrCurve, path_or_file) -> None:
    own = isinstance(path_or_file, str)
    fh = open(path_or_file, "w", encoding="utf-8", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(["family", "shape", "runs", "std_err", "min_rcv_std_err"])
        ref = "" if curve.min_rcv_std_err is None else repr(curve.min_rcv_std_err)
        for family in sorted(curve.families):
            for pt in curve.families[family]:
                se = "" if pt.std_err is None else repr(pt.std_err)
                writer.writerow([family, pt.shape, pt.runs, se, ref])
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# Per-design analysis and writers


@dataclass(frozen=True)
class DesignReport:
    plan: DesignPlan
    table: ErrTable
    fit: AnovaResult
    perms: PermutationResult
    means: SettingMeans
    seconds: float

    @property
    def label(self) -> str:
        return self.plan.notation().replace(" ", "_")


def _model_for(table: ErrTable, config: RunConfig) -> ModelSpec:
    if config.model_random is not None or config.model_fixed is not None:
        return ModelSpec(config.model_random or (), config.model_fixed or (SETTING,))
    base = default_model(table)
    if table.grid is None:
        return base
    # Prefer per-hyperparameter fixed effects when the grid supports them.
    decomposed = ModelSpec(base.random_terms, tuple(table.grid.param_names))
    try:
        fit_anova(table, decomposed)
        return decomposed
    except UnbalancedTableError:
        return base


def analyze_design(table: ErrTable, config: RunConfig, seconds: float) -> DesignReport:
    model = _model_for(table, config)
    fit = fit_anova(table, model)
    plan = PermutationPlan(
        n_permutations=config.n_permutations,
        seed=config.permutation_seed,
    )
    perms = permutation_test(fit, plan)
    # Setting means and std.err always come from the canonical model
    # (blocks + aggregate setting term): its residual is the one whose
    # variance the designs are built to shrink. The decomposed model above
    # only drives the per-term report.
    means = estimate_setting_means(table)
    return DesignReport(table.plan, table, fit, perms, means, seconds)


def write_anova_csv(report: DesignReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["term", "df", "SSE", "MSE", "p_value"])
        for name, df, sse, mse in report.fit.rows():
            if name == "Residuals":
                p = ""
            else:
                p = repr(report.perms.tests[name].p_value) if name in report.perms.tests else ""
            writer.writerow([name, df, repr(sse), "" if math.isnan(mse) else repr(mse), p])


def write_best_settings_csv(reports: list[DesignReport], grid: SettingGrid, top_k: int, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["design", "rank", "setting_index", *grid.param_names, "mean_err", "std_err"])
        for rep in reports:
            order = rank_settings(rep.means)
            for rank, m in enumerate(order[:top_k], start=1):
                params = grid.settings[m].params
                se = "" if rep.means.std_err is None else repr(rep.means.std_err)
                writer.writerow([
                    rep.plan.notation(), rank, m,
                    *[_best_value(params[name]) for name in grid.param_names],
                    repr(float(rep.means.means[m])), se,
                ])


def _best_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolved_config_doc(config: RunConfig) -> dict[str, Any]:
    """Config echo with every seed made explicit; re-running it reproduces
    the outputs byte for byte."""
    designs = []
    for plan in config.designs:
        d: dict[str, Any] = {"variant": plan.variant, "master_seed": plan.master_seed}
        if plan.variant in (BCV, BCV_X0):
            d["cv_seeds"] = list(plan.cv_seeds)
        if plan.variant == BCV:
            d["learner_seeds"] = list(plan.learner_seeds)
        if plan.variant == RCV:
            d["reps"] = plan.n_reps
            d["shared_within_rep"] = plan.rcv_shared_within_rep
        designs.append(d)
    doc: dict[str, Any] = {
        "dataset": {
            "path": config.dataset_path,
            "target": config.target_column,
            "task": config.task,
            "name": config.dataset_name,
        },
        "loss": config.loss.kind,
        "learner": {"kind": config.learner.kind, "params": config.learner.params},
        "grid": {"params": config.grid_params, "exclude": config.grid_exclusions},
        "strategy": {"folds": config.strategy.k, "sampling": config.strategy.sampling},
        "designs": designs,
        "master_seed": config.master_seed,
        "permutations": {"B": config.n_permutations, "seed": config.permutation_seed},
        "top_k": config.top_k,
        "threads": config.threads,
        "output_dir": config.out_dir,
        "stderr_curve": {
            "enabled": config.stderr_curve_enabled,
            "per_setting": config.stderr_curve_per_setting,
        },
    }
    if config.model_random is not None or config.model_fixed is not None:
        doc["model"] = {
            "random": list(config.model_random or ()),
            "fixed": list(config.model_fixed or (SETTING,)),
        }
    return doc


def run(config: RunConfig) -> list[str]:
    """Execute the whole run; returns the list of files written."""
    dataset = load_csv(config.dataset_path, config.target_column, config.task,
                       name=config.dataset_name)
    grid = config.build_grid()

    reports: list[DesignReport] = []
    for plan in config.designs:
        t0 = time.perf_counter()
        table = run_design(dataset, grid, plan, config.learner, config.loss,
                           threads=config.threads)
        reports.append(analyze_design(table, config, time.perf_counter() - t0))

    curve = None
    if config.stderr_curve_enabled:
        # One family per design, keyed by its notation, so several designs
        # of the same variant never mix their (unrelated) seed ladders.
        families: dict[str, tuple[CurvePoint, ...]] = {}
        min_rcv: float | None = None
        for rep in reports:
            tables = curve_tables_for(rep.table)
            if not tables:
                continue
            c = stderr_curve(tables, per_setting=config.stderr_curve_per_setting)
            families[rep.plan.notation()] = next(iter(c.families.values()))
            if c.min_rcv_std_err is not None:
                min_rcv = c.min_rcv_std_err if min_rcv is None else min(min_rcv, c.min_rcv_std_err)
        if families:
            curve = StdErrCurve(families, min_rcv)

    os.makedirs(config.out_dir, exist_ok=True)
    written: list[str] = []
    try:
        for rep in reports:
            p = os.path.join(config.out_dir, f"err_table_{rep.label}.csv")
            rep.table.to_csv(p)
            written.append(p)
            p = os.path.join(config.out_dir, f"anova_{rep.label}.csv")
            write_anova_csv(rep, p)
            written.append(p)
        p = os.path.join(config.out_dir, "best_settings.csv")
        write_best_settings_csv(reports, grid, config.top_k, p)
        written.append(p)
        if curve is not None:
            p = os.path.join(config.out_dir, "stderr_curve.csv")
            curve_to_csv(curve, p)
            written.append(p)

        manifest = {
            "config": _resolved_config_doc(config),
            "versions": {
                "blockedcv": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            "dataset": {
                "rows": dataset.n_rows,
                "features": dataset.n_features,
                "dropped_rows": dataset.dropped_rows,
            },
            "grid_size": grid.size,
            "designs": [
                {
                    "notation": rep.plan.notation(),
                    "records": rep.table.n_records,
                    "seconds": round(rep.seconds, 3),
                    "model": {
                        "random": list(rep.fit.model.random_terms),
                        "fixed": list(rep.fit.model.fixed_terms),
                    },
                }
                for rep in reports
            ],
            "outputs": {os.path.basename(p): _sha256(p) for p in written},
        }
        p = os.path.join(config.out_dir, "run_manifest.json")
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(p)
    except BaseException:
        for p in written:
            try:
                os.remove(p)
            except OSError:
                pass
        raise
    return written


def _dry_run_lines(config: RunConfig) -> list[str]:
    grid = config.build_grid()
    lines = [f"grid: {grid.size} settings"]
    for plan in config.designs:
        cells = grid.size * plan.runs_per_setting
        lines.append(
            f"{plan.notation()}: {grid.size} settings x {plan.runs_per_setting} runs"
            f" = {cells} cells ({cells * plan.strategy.k} model fits)"
        )
    return lines


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="blockedcv",
        description="Grid-search a learner with seed-blocked cross-validation designs.",
    )
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--threads", type=int, help="worker threads (or env BCV_THREADS)")
    parser.add_argument("--dry-run", action="store_true", help="print run sizes and exit")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--perms", type=int, help="permutation count override")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        overrides: dict[str, Any] = {}
        if args.out is not None:
            overrides["out_dir"] = args.out
        threads = args.threads
        if threads is None and os.environ.get("BCV_THREADS"):
            threads = int(os.environ["BCV_THREADS"])
        if threads is not None:
            overrides["threads"] = threads
        if args.perms is not None:
            overrides["n_permutations"] = args.perms
        if args.seed is not None:
            # Re-resolve the whole config with the new master seed so every
            # derived seed list follows it.
            with open(args.config, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            doc["master_seed"] = args.seed
            config = parse_config(doc, base_dir=os.path.dirname(os.path.abspath(args.config)))
        if overrides:
            from dataclasses import replace

            config = replace(config, **overrides)

        if args.dry_run:
            for line in _dry_run_lines(config):
                print(line)
            return 0

        written = run(config)
        for p in written:
            print(p)
        return 0
    except BlockedCvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
