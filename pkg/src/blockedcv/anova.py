"""Balanced mixed-effects decomposition of an error table.

The model is additive: observed error = grand mean + one effect per term
(+ residual), with every effect vector identified by zero-sum constraints.
In a complete balanced (or proportionally balanced) table those constraints
make the closed forms exact: a main-effect level estimate is the level mean
minus the grand mean, and an interaction estimate is the cell mean minus
both contained marginal effects and the grand mean. Sums of squares are
then additive and the residual is obtained by subtraction.

Terms
-----
* ``"CVseeds"``  - the partition-seed block (random),
* ``"RFseeds"``  - the learner-seed block (random),
* ``"setting"``  - the aggregate per-setting effect (fixed),
* any grid parameter name, e.g. ``"mtry"`` (fixed),
* two-way interactions written ``"a:b"``, e.g. ``"replace:CVseeds"``
  (random when a block is involved, else fixed).

A model is rejected (``UnbalancedTableError``) when its terms are not
mutually orthogonal in the table at hand, e.g. hyperparameter main effects
on a grid with excluded combinations; the aggregate ``"setting"`` term is
always available. Generic unbalanced least squares is out of scope.

All means use exact float summation (``math.fsum``), which dominates
compensated Kahan summation, so the decomposition identities hold to
near machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .design import BCV, BCV_X0, RCV, ErrTable
from .errors import AnovaError, UnbalancedTableError

CV_SEEDS = "CVseeds"
RF_SEEDS = "RFseeds"
SETTING = "setting"

_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class ModelSpec:
    """Random and fixed terms to fit. Order is kept for reporting."""

    random_terms: tuple[str, ...] = ()
    fixed_terms: tuple[str, ...] = (SETTING,)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for t in (*self.random_terms, *self.fixed_terms):
            if t in seen:
                raise AnovaError(f"term {t!r} listed twice")
            seen.add(t)
        for t in self.random_terms:
            if not _touches_block(t):
                raise AnovaError(f"random term {t!r} must involve {CV_SEEDS} or {RF_SEEDS}")
        for t in self.fixed_terms:
            if _touches_block(t):
                raise AnovaError(f"fixed term {t!r} involves a block; declare it random")

    @property
    def terms(self) -> tuple[str, ...]:
        return (*self.random_terms, *self.fixed_terms)


def _touches_block(term: str) -> bool:
    return any(part in (CV_SEEDS, RF_SEEDS) for part in term.split(":"))


def default_model(table: ErrTable) -> ModelSpec:
    """The canonical model for the table's design: all available blocks as
    random terms plus the aggregate setting term."""
    if table.variant == BCV:
        return ModelSpec((CV_SEEDS, RF_SEEDS), (SETTING,))
    if table.variant == BCV_X0:
        return ModelSpec((CV_SEEDS,), (SETTING,))
    return ModelSpec((), (SETTING,))


@dataclass(frozen=True)
class TermFit:
    """One fitted model term."""

    name: str
    kind: str  # "random" | "fixed"
    levels: tuple[str, ...]
    effects: np.ndarray       # one estimate per level, zero-sum
    counts: np.ndarray        # cells per level
    df: int
    sse: float
    mse: float
    cell_effects: np.ndarray  # the effect each cell receives
    codes: np.ndarray         # each cell's level index


@dataclass(frozen=True)
class AnovaResult:
    """Effect estimates plus the SSE/df decomposition for one table."""

    table: ErrTable
    model: ModelSpec
    mu: float
    terms: dict[str, TermFit]
    fitted: np.ndarray
    residuals: np.ndarray
    residual_df: int
    residual_sse: float
    total_df: int
    total_sse: float

    @property
    def residual_mse(self) -> float:
        if self.residual_df == 0:
            return math.nan
        return self.residual_sse / self.residual_df

    def term(self, name: str) -> TermFit:
        try:
            return self.terms[name]
        except KeyError:
            raise AnovaError(f"term {name!r} was not in the fitted model") from None

    def rows(self) -> list[tuple[str, int, float, float]]:
        """(term, df, SSE, MSE) rows, residual last."""
        out = [(t.name, t.df, t.sse, t.mse) for t in self.terms.values()]
        out.append(("Residuals", self.residual_df, self.residual_sse, self.residual_mse))
        return out


def _fsum_mean(values: np.ndarray) -> float:
    return math.fsum(values) / len(values)


def _group_means(codes: np.ndarray, values: np.ndarray, n_levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-level (mean, count) with exact summation."""
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    sorted_vals = values[order]
    bounds = np.searchsorted(sorted_codes, np.arange(n_levels + 1))
    means = np.empty(n_levels, dtype=np.float64)
    counts = np.empty(n_levels, dtype=np.int64)
    for l in range(n_levels):
        lo, hi = bounds[l], bounds[l + 1]
        counts[l] = hi - lo
        means[l] = math.fsum(sorted_vals[lo:hi]) / (hi - lo) if hi > lo else math.nan
    return means, counts


class _Factor:
    """A single categorical factor over the table's cells."""

    def __init__(self, name: str, codes: np.ndarray, labels: tuple[str, ...]):
        self.name = name
        self.codes = codes
        self.labels = labels
        self.n_levels = len(labels)


def _resolve_factor(table: ErrTable, name: str) -> _Factor:
    if name == CV_SEEDS:
        if table.variant == RCV:
            raise AnovaError(f"{CV_SEEDS} is not a factor of an rcv table (seeds vary freely)")
        labels = _block_labels(table, axis=0)
        return _Factor(name, table.block_i.astype(np.int64), labels)
    if name == RF_SEEDS:
        if table.variant != BCV:
            raise AnovaError(f"{RF_SEEDS} is not a factor of a {table.variant} table")
        labels = _block_labels(table, axis=1)
        return _Factor(name, table.block_j.astype(np.int64), labels)
    if name == SETTING:
        labels = tuple(str(m) for m in range(table.n_settings))
        return _Factor(name, table.setting_index.astype(np.int64), labels)
    if table.grid is None:
        raise AnovaError(f"table has no grid metadata; cannot resolve term {name!r}")
    if name not in table.grid.param_names:
        raise AnovaError(f"unknown term {name!r}")
    values = table.grid.levels_of(name)
    value_code = {repr(v): c for c, v in enumerate(values)}
    per_setting = np.array(
        [value_code[repr(table.grid.settings[m].params[name])] for m in range(table.n_settings)],
        dtype=np.int64,
    )
    return _Factor(name, per_setting[table.setting_index], tuple(str(v) for v in values))


def _block_labels(table: ErrTable, axis: int) -> tuple[str, ...]:
    coords = table.block_i if axis == 0 else table.block_j
    seeds = table.cv_seed if axis == 0 else table.learner_seed
    n = table.n_cv if axis == 0 else table.n_learner
    labels = []
    for level in range(n):
        pos = np.flatnonzero(coords == level)[0]
        labels.append(str(int(seeds[pos])))
    return tuple(labels)


def _interaction(table: ErrTable, a: _Factor, b: _Factor, name: str, y: np.ndarray, mu: float) -> TermFit:
    """Double-centered interaction estimate; requires a complete crossing."""
    la, lb = a.n_levels, b.n_levels
    codes = a.codes * lb + b.codes
    cell_means, cell_counts = _group_means(codes, y, la * lb)
    if np.any(cell_counts == 0):
        raise UnbalancedTableError(
            f"interaction {name!r} is incomplete in this table (missing level combinations)"
        )
    a_means, _ = _group_means(a.codes, y, la)
    b_means, _ = _group_means(b.codes, y, lb)
    effects = cell_means.reshape(la, lb) - a_means[:, None] - b_means[None, :] + mu
    effects = effects.reshape(-1)
    labels = tuple(f"{a.labels[u]}:{b.labels[v]}" for u in range(la) for v in range(lb))
    df = (la - 1) * (lb - 1)
    cell_effects = effects[codes]
    sse = float(np.dot(effects * cell_counts, effects))
    return TermFit(name, "", labels, effects, cell_counts, df, sse, sse / df if df else 0.0,
                   cell_effects, codes)


def _main(term_name: str, factor: _Factor, y: np.ndarray, mu: float) -> TermFit:
    means, counts = _group_means(factor.codes, y, factor.n_levels)
    if np.any(counts == 0):
        raise UnbalancedTableError(f"term {term_name!r} has empty levels in this table")
    effects = means - mu
    df = factor.n_levels - 1
    cell_effects = effects[factor.codes]
    sse = float(np.dot(effects * counts, effects))
    return TermFit(term_name, "", factor.labels, effects, counts, df, sse, sse / df if df else 0.0,
                   cell_effects, factor.codes)


def fit_anova(table: ErrTable, model: ModelSpec | None = None) -> AnovaResult:
    """Fit the additive model by the balanced closed forms.

    Raises :class:`UnbalancedTableError` if the requested terms are not
    mutually orthogonal in this table, since the closed-form estimates
    (and additive sums of squares) are only valid then.
    """
    if model is None:
        model = default_model(table)
    y = table.err.astype(np.float64)
    n = len(y)
    mu = _fsum_mean(y)

    fits: dict[str, TermFit] = {}
    for kind, names in (("random", model.random_terms), ("fixed", model.fixed_terms)):
        for name in names:
            parts = name.split(":")
            if len(parts) == 1:
                tf = _main(name, _resolve_factor(table, name), y, mu)
            elif len(parts) == 2:
                fa = _resolve_factor(table, parts[0])
                fb = _resolve_factor(table, parts[1])
                tf = _interaction(table, fa, fb, name, y, mu)
            else:
                raise AnovaError(f"only two-way interactions are supported, got {name!r}")
            fits[name] = TermFit(
                tf.name, kind, tf.levels, tf.effects, tf.counts, tf.df, tf.sse, tf.mse,
                tf.cell_effects, tf.codes,
            )

    _check_orthogonality(fits, scale=float(np.max(np.abs(y))) if n else 0.0)

    fitted = np.full(n, mu)
    for tf in fits.values():
        fitted = fitted + tf.cell_effects
    residuals = y - fitted

    total_df = n - 1
    total_sse = float(np.dot(y - mu, y - mu))
    model_df = sum(tf.df for tf in fits.values())
    residual_df = total_df - model_df
    if residual_df < 0:
        raise AnovaError(f"model consumes {model_df} df but the table has only {total_df}")
    residual_sse = float(np.dot(residuals, residuals))

    return AnovaResult(
        table=table,
        model=model,
        mu=mu,
        terms=fits,
        fitted=fitted,
        residuals=residuals,
        residual_df=residual_df,
        residual_sse=residual_sse,
        total_df=total_df,
        total_sse=total_sse,
    )


def _check_orthogonality(fits: dict[str, TermFit], scale: float) -> None:
    """Pairwise orthogonality of the effect vectors, relative to data scale.

    Catches every model whose closed-form decomposition would be invalid
    (non-additive sums of squares), e.g. hyperparameter main effects on a
    grid with excluded combinations.
    """
    names = list(fits)
    eps = _ORTHO_TOL * max(scale, 1.0) ** 2
    for i in range(len(names)):
        u = fits[names[i]].cell_effects
        nu = float(np.linalg.norm(u))
        for j in range(i + 1, len(names)):
            v = fits[names[j]].cell_effects
            dot = abs(float(np.dot(u, v)))
            if dot > _ORTHO_TOL * nu * float(np.linalg.norm(v)) + eps:
                raise UnbalancedTableError(
                    f"terms {names[i]!r} and {names[j]!r} are not orthogonal in this "
                    f"table (unbalanced for this model); use the aggregate "
                    f"'{SETTING}' term or a complete factorial grid"
                )


@dataclass(frozen=True)
class SettingMeans:
    """Per-setting mean errors with their common standard error."""

    means: np.ndarray
    std_err: float | None
    runs: int
    residual_mse: float
    residual_df: int
    fit: AnovaResult = field(repr=False)

    @property
    def n_settings(self) -> int:
        return len(self.means)


def estimate_setting_means(table: ErrTable, model: ModelSpec | None = None) -> SettingMeans:
    """Mean error per setting plus its standard error.

    The standard error is ``sqrt(residual MSE / R)`` with R the number of
    runs per setting; the residual comes from the design's canonical model
    (blocks plus settings), so for a repeated design it estimates the sum
    of all three variance components while for a blocked design the block
    components are removed. With R = 1 (or no residual degrees of freedom)
    the standard error is undefined and reported as None.
    """
    fit = fit_anova(table, model)
    cube = table.cell_cube()
    M = table.n_settings
    means = np.array([_fsum_mean(cube[m].reshape(-1)) for m in range(M)])
    R = table.runs_per_setting
    if R <= 1 or fit.residual_df == 0:
        std_err = None
    else:
        std_err = math.sqrt(fit.residual_mse / R)
    return SettingMeans(
        means=means,
        std_err=std_err,
        runs=R,
        residual_mse=fit.residual_mse,
        residual_df=fit.residual_df,
        fit=fit,
    )


def rank_settings(means: SettingMeans | np.ndarray) -> list[int]:
    """Setting indices sorted by ascending mean error, ties by index."""
    vec = means.means if isinstance(means, SettingMeans) else np.asarray(means)
    return list(np.lexsort((np.arange(len(vec)), vec)))
