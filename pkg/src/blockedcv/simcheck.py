"""Monte Carlo oracle: synthetic error tables with known variance components.

Tables are generated straight from the additive mixed model

    err = grand_mean + partition_effect + learner_effect + setting_effect + noise

with the blocking structure of the requested design: a blocked table draws
its partition/learner effects once and reuses them across all settings,
a repeated table redraws everything per cell. Running the estimators on
thousands of such tables validates the closed-form variances

    Var[setting mean | blocked design]  = resid_sd^2 / (n_cv * n_learner)
    Var[setting mean | cv-only blocks]  = (learner_sd^2 + resid_sd^2) / n_cv
    Var[setting mean | repeated design] = (partition_sd^2 + learner_sd^2
                                           + resid_sd^2) / n_reps

and the calibration of the permutation test.

The empirical variance is measured on setting-mean deviations from each
table's grand mean, scaled by M/(M-1). Block averages are shared by every
setting within a table, so they cancel from the deviations; that matches
the blocked formula above, which is exactly the variance relevant for
comparing settings. The same estimator is unbiased for the repeated-design
formula because there the per-cell noise is independent everywhere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .design import BCV, BCV_X0, RCV, ErrTable
from .errors import DesignError
from .rng import derive_seed

_DOM_TABLE = 0x60
_VARIANT_CODE = {BCV: 0, BCV_X0: 1, RCV: 2}

GAUSSIAN = "gaussian"
UNIFORM = "uniform"


@dataclass(frozen=True)
class SyntheticModel:
    """Ground truth for a simulated tuning problem."""

    grand_mean: float
    setting_effects: tuple[float, ...]
    partition_sd: float = 0.0
    learner_sd: float = 0.0
    resid_sd: float = 0.0
    noise: str = GAUSSIAN
    seed: int = 0
    interaction_scale: float = 0.0  # optional partition x setting residual structure

    def __post_init__(self) -> None:
        total = math.fsum(self.setting_effects)
        scale = max(1.0, math.fsum(abs(t) for t in self.setting_effects))
        if abs(total) > 1e-12 * scale:
            raise DesignError(f"setting effects must sum to zero, got {total}")
        for name in ("partition_sd", "learner_sd", "resid_sd"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise DesignError(f"{name} must be finite and >= 0, got {v}")
        if self.noise not in (GAUSSIAN, UNIFORM):
            raise DesignError(f"noise must be {GAUSSIAN!r} or {UNIFORM!r}")

    @property
    def n_settings(self) -> int:
        return len(self.setting_effects)


def _draw(rng: np.random.Generator, sd: float, size, noise: str) -> np.ndarray:
    if noise == GAUSSIAN:
        return rng.normal(0.0, sd, size) if sd > 0 else np.zeros(size)
    half = sd * math.sqrt(3.0)
    return rng.uniform(-half, half, size) if sd > 0 else np.zeros(size)


def simulate_table(
    model: SyntheticModel,
    variant: str,
    n_cv: int,
    n_learner: int = 1,
    table_seed: int | None = None,
) -> ErrTable:
    """Generate one table of the given design shape.

    Blocked variants draw the partition effects (and, for the fully
    blocked design, the learner effects) once and reuse them across all
    settings; the repeated variant draws everything fresh per cell.
    Block coordinates stand in for seeds in the output table.
    """
    if variant not in (BCV, BCV_X0, RCV):
        raise DesignError(f"unknown design variant {variant!r}")
    if n_cv < 1 or n_learner < 1:
        raise DesignError("design shape must be at least 1x1")
    if variant != BCV and n_learner != 1:
        raise DesignError(f"{variant} has no learner-seed axis")

    M = model.n_settings
    tau = np.asarray(model.setting_effects)
    seed = model.seed if table_seed is None else table_seed
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, [_DOM_TABLE])))

    # err cube laid out (setting, cv, learner) to match canonical order.
    if variant == BCV:
        pi = _draw(rng, model.partition_sd, n_cv, model.noise)
        rho = _draw(rng, model.learner_sd, n_learner, model.noise)
        e = _draw(rng, model.resid_sd, (M, n_cv, n_learner), model.noise)
        cube = (
            model.grand_mean
            + tau[:, None, None]
            + pi[None, :, None]
            + rho[None, None, :]
            + e
        )
        if model.interaction_scale != 0.0:
            cube = cube + model.interaction_scale * pi[None, :, None] * tau[:, None, None]
    elif variant == BCV_X0:
        pi = _draw(rng, model.partition_sd, n_cv, model.noise)
        rho = _draw(rng, model.learner_sd, (M, n_cv, 1), model.noise)
        e = _draw(rng, model.resid_sd, (M, n_cv, 1), model.noise)
        cube = model.grand_mean + tau[:, None, None] + pi[None, :, None] + rho + e
        if model.interaction_scale != 0.0:
            cube = cube + model.interaction_scale * pi[None, :, None] * tau[:, None, None]
    else:
        pi = _draw(rng, model.partition_sd, (M, n_cv, 1), model.noise)
        rho = _draw(rng, model.learner_sd, (M, n_cv, 1), model.noise)
        e = _draw(rng, model.resid_sd, (M, n_cv, 1), model.noise)
        cube = model.grand_mean + tau[:, None, None] + pi + rho + e

    setting_index = np.repeat(np.arange(M, dtype=np.int64), n_cv * n_learner)
    block_i = np.tile(np.repeat(np.arange(n_cv, dtype=np.int64), n_learner), M)
    block_j = np.tile(np.arange(n_learner, dtype=np.int64), M * n_cv)
    return ErrTable(
        variant=variant,
        n_settings=M,
        n_cv=n_cv,
        n_learner=n_learner,
        setting_index=setting_index,
        block_i=block_i,
        block_j=block_j,
        cv_seed=block_i.astype(np.uint64),
        learner_seed=block_j.astype(np.uint64),
        err=cube.reshape(-1),
        meta={"synthetic": True, "noise": model.noise},
    )


def formula_variance(model: SyntheticModel, variant: str, n_cv: int, n_learner: int = 1) -> float:
    """The closed-form variance of a setting-mean estimate for this design."""
    s_pi = model.partition_sd ** 2
    s_rho = model.learner_sd ** 2
    s_eps = model.resid_sd ** 2
    if variant == BCV:
        return s_eps / (n_cv * n_learner)
    if variant == BCV_X0:
        return (s_rho + s_eps) / n_cv
    if variant == RCV:
        return (s_pi + s_rho + s_eps) / n_cv
    raise DesignError(f"unknown design variant {variant!r}")


def empirical_setting_mean_variance(
    model: SyntheticModel,
    variant: str,
    n_cv: int,
    n_learner: int = 1,
    n_reps: int = 10_000,
) -> float:
    """Monte Carlo variance of the setting means over fresh tables.

    Measured on deviations from each table's grand mean (block averages
    cancel) and rescaled by M/(M-1) so the estimator is unbiased for the
    design's closed-form variance. See the module docstring.
    """
    M = model.n_settings
    R = n_cv * n_learner
    devs = np.empty((n_reps, M))
    for rep in range(n_reps):
        table = simulate_table(
            model, variant, n_cv, n_learner,
            table_seed=derive_seed(model.seed, [_VARIANT_CODE[variant], n_cv, n_learner, rep]),
        )
        sm = table.cell_cube().reshape(M, R).mean(axis=1)
        devs[rep] = sm - sm.mean()
    # Center every column on its first replication: variance is shift
    # invariant and the noiseless case comes out exactly zero.
    devs -= devs[0]
    per_setting = devs.var(axis=0, ddof=1)
    return float(per_setting.mean() * M / (M - 1))


@dataclass(frozen=True)
class VarianceCheckRow:
    design: str
    formula_var: float
    empirical_var: float

    @property
    def ratio(self) -> float:
        return self.empirical_var / self.formula_var if self.formula_var > 0 else math.inf

    @property
    def passed(self) -> bool:
        if self.formula_var == 0.0:
            return self.empirical_var == 0.0
        return 0.9 <= self.ratio <= 1.1


@dataclass(frozen=True)
class VarianceCheckReport:
    rows: tuple[VarianceCheckRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["design", "formula_var", "empirical_var", "ratio", "pass"])
            for r in self.rows:
                writer.writerow([r.design, repr(r.formula_var), repr(r.empirical_var),
                                 repr(r.ratio), str(r.passed).lower()])


def validate_variance_formulas(
    model: SyntheticModel,
    shapes: list[tuple[str, int, int]],
    n_reps: int = 10_000,
) -> VarianceCheckReport:
    """Compare empirical and closed-form setting-mean variances per shape.

    ``shapes`` holds (variant, n_cv, n_learner) triples; a row passes when
    the empirical/formula ratio is within [0.9, 1.1].
    """
    if n_reps < 1000:
        raise DesignError(f"need n_reps >= 1000 for a meaningful check, got {n_reps}")
    rows = []
    for variant, n_cv, n_learner in shapes:
        formula = formula_variance(model, variant, n_cv, n_learner)
        empirical = empirical_setting_mean_variance(model, variant, n_cv, n_learner, n_reps)
        label = f"{variant} {n_cv}x{n_learner}" if variant == BCV else f"{variant} {n_cv}"
        rows.append(VarianceCheckRow(label, formula, empirical))
    return VarianceCheckReport(tuple(rows))
