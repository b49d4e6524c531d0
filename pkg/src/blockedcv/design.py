"""Setting grids and the execution of blocked / repeated CV designs.

``run_design`` turns (dataset, grid, plan) into a complete balanced table
of CV errors. The table is long format: one record per (setting, block or
repetition) cell. A cell's error is the loss over the pooled out-of-fold
predictions: every instance is predicted once, by the model trained on its
fold's complement, and one loss is computed over all n predictions.

Blocking contract. Within a blocked run, the content of a cell depends
only on (dataset, strategy, its cv seed, its learner seed, its setting):

* all cells sharing a cv-seed index reuse one identical partition;
* the model for fold f uses the seed ``derive_seed(learner_seed, [f])``,
  the same for every setting, so the learner's random behavior is held
  fixed while settings vary.

Because cells never look at the rest of the plan, a larger design contains
every smaller design with prefix seed lists as an exact sub-table, and any
degree of parallel execution yields bit-identical results.
"""

from __future__ import annotations

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .data import CLASSIFICATION, Dataset
from .errors import DesignError
from .learner import LearnerSpec, LossFn, compute_loss, predict, train
from .partition import FoldPartition, PartitionStrategy, partition_folds
from .rng import derive_seed

BCV = "bcv"
BCV_X0 = "bcv_x0"
RCV = "rcv"

# Domain words keeping derived seed streams apart.
_DOM_CV_LIST = 0x10
_DOM_LEARNER_LIST = 0x11
_DOM_X0_LEARNER = 0x12
_DOM_RCV_CV = 0x13
_DOM_RCV_LEARNER = 0x14
_DOM_FOLD = 0x15


@dataclass(frozen=True)
class Setting:
    """One hyperparameter combination; ``index`` is its grid position."""

    index: int
    params: dict[str, Any]


@dataclass(frozen=True)
class SettingGrid:
    """Materialized Cartesian grid minus excluded combinations.

    Order is row-major over the declared parameter order (the last
    parameter varies fastest) and is part of the contract: setting indices
    name grid positions.
    """

    param_names: tuple[str, ...]
    param_values: tuple[tuple[Any, ...], ...]
    exclusions: tuple[dict[str, Any], ...]
    settings: tuple[Setting, ...]

    @property
    def size(self) -> int:
        return len(self.settings)

    def levels_of(self, param: str) -> tuple[Any, ...]:
        try:
            return self.param_values[self.param_names.index(param)]
        except ValueError:
            raise DesignError(f"grid has no parameter {param!r}") from None


def build_grid(
    params: dict[str, list[Any]],
    exclusions: list[dict[str, Any] | Callable[[dict[str, Any]], bool]] | None = None,
) -> SettingGrid:
    """Build the ordered setting grid.

    ``params`` is an ordered name -> value-list mapping. Each exclusion is
    either a field-equality conjunction (dict: a combination is removed iff
    it matches every listed field) or a predicate on the combination dict.
    """
    if not params:
        raise DesignError("grid needs at least one parameter")
    names = tuple(params)
    values = []
    for name in names:
        vals = tuple(params[name])
        if len(vals) == 0:
            raise DesignError(f"parameter {name!r} has an empty value list")
        if len(set(map(repr, vals))) != len(vals):
            raise DesignError(f"parameter {name!r} has duplicate values")
        values.append(vals)
    excl = tuple(exclusions or ())
    for e in excl:
        if isinstance(e, dict):
            unknown = set(e) - set(names)
            if unknown:
                raise DesignError(f"exclusion references unknown parameters {sorted(unknown)}")

    def excluded(combo: dict[str, Any]) -> bool:
        for e in excl:
            if callable(e):
                if e(combo):
                    return True
            elif all(combo[k] == v for k, v in e.items()):
                return True
        return False

    settings = []
    for combo_vals in itertools.product(*values):
        combo = dict(zip(names, combo_vals))
        if not excluded(combo):
            settings.append(Setting(index=len(settings), params=combo))
    if not settings:
        raise DesignError("exclusions removed every setting")
    excl_dicts = tuple(e for e in excl if isinstance(e, dict))
    return SettingGrid(names, tuple(values), excl_dicts, tuple(settings))


@dataclass(frozen=True)
class DesignPlan:
    """A variance-reduction design: which seeds are blocked, which vary.

    * ``bcv``   - Y cv seeds crossed with Z learner seeds, both blocked.
    * ``bcv_x0`` - cv seeds blocked, learner seed drawn fresh per cell.
    * ``rcv``   - both seeds drawn fresh; by default fresh per cell (the
      strict reading of repetitions varying freely), or once per
      repetition with ``rcv_shared_within_rep=True``.
    """

    variant: str
    strategy: PartitionStrategy
    cv_seeds: tuple[int, ...] = ()
    learner_seeds: tuple[int, ...] = ()
    n_reps: int = 0
    master_seed: int = 0
    rcv_shared_within_rep: bool = False

    def __post_init__(self) -> None:
        if self.variant not in (BCV, BCV_X0, RCV):
            raise DesignError(f"unknown design variant {self.variant!r}")
        if self.variant in (BCV, BCV_X0):
            if not self.cv_seeds:
                raise DesignError("blocked designs need at least one cv seed")
            if len(set(self.cv_seeds)) != len(self.cv_seeds):
                raise DesignError("cv seed list contains duplicates")
        if self.variant == BCV:
            if not self.learner_seeds:
                raise DesignError("bcv needs at least one learner seed")
            if len(set(self.learner_seeds)) != len(self.learner_seeds):
                raise DesignError("learner seed list contains duplicates")
        if self.variant == RCV and self.n_reps < 1:
            raise DesignError("rcv needs at least one repetition")

    @classmethod
    def bcv(
        cls,
        strategy: PartitionStrategy,
        n_cv: int | None = None,
        n_learner: int | None = None,
        cv_seeds: list[int] | None = None,
        learner_seeds: list[int] | None = None,
        master_seed: int = 0,
    ) -> "DesignPlan":
        cv = tuple(cv_seeds) if cv_seeds else tuple(
            derive_seed(master_seed, [_DOM_CV_LIST, i]) for i in range(n_cv or 0)
        )
        lr = tuple(learner_seeds) if learner_seeds else tuple(
            derive_seed(master_seed, [_DOM_LEARNER_LIST, j]) for j in range(n_learner or 0)
        )
        return cls(BCV, strategy, cv_seeds=cv, learner_seeds=lr, master_seed=master_seed)

    @classmethod
    def bcv_x0(
        cls,
        strategy: PartitionStrategy,
        n_cv: int | None = None,
        cv_seeds: list[int] | None = None,
        master_seed: int = 0,
    ) -> "DesignPlan":
        cv = tuple(cv_seeds) if cv_seeds else tuple(
            derive_seed(master_seed, [_DOM_CV_LIST, i]) for i in range(n_cv or 0)
        )
        return cls(BCV_X0, strategy, cv_seeds=cv, master_seed=master_seed)

    @classmethod
    def rcv(
        cls,
        strategy: PartitionStrategy,
        n_reps: int,
        master_seed: int = 0,
        shared_within_rep: bool = False,
    ) -> "DesignPlan":
        return cls(RCV, strategy, n_reps=n_reps, master_seed=master_seed,
                   rcv_shared_within_rep=shared_within_rep)

    @property
    def n_cv(self) -> int:
        return len(self.cv_seeds) if self.variant in (BCV, BCV_X0) else self.n_reps

    @property
    def n_learner(self) -> int:
        return len(self.learner_seeds) if self.variant == BCV else 1

    @property
    def runs_per_setting(self) -> int:
        return self.n_cv * self.n_learner

    def notation(self) -> str:
        k = self.strategy.k
        s = self.strategy.sampling
        if self.variant == BCV:
            return f"{k}-BCV {s} {len(self.cv_seeds)}x{len(self.learner_seeds)}"
        if self.variant == BCV_X0:
            return f"{k}-BCV {s} {len(self.cv_seeds)}x0"
        return f"{k}-RCV {s} {self.n_reps}Rep"


@dataclass(frozen=True)
class ErrTable:
    """Complete balanced long-format table of CV errors.

    Rows are in canonical order: setting index, then the first block
    coordinate (cv-seed index or repetition), then the second (learner-seed
    index, constant 0 except for bcv). ``block_i``/``block_j`` are those
    coordinates; ``cv_seed``/``learner_seed`` record the actual seeds.
    """

    variant: str
    n_settings: int
    n_cv: int
    n_learner: int
    setting_index: np.ndarray
    block_i: np.ndarray
    block_j: np.ndarray
    cv_seed: np.ndarray
    learner_seed: np.ndarray
    err: np.ndarray
    grid: SettingGrid | None = None
    plan: DesignPlan | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        # err >= 0 holds for tables produced by run_design (losses are
        # nonnegative); synthetic tables from the simulation module may go
        # negative, so it is not enforced here.
        expect = self.n_settings * self.n_cv * self.n_learner
        if len(self.err) != expect:
            raise DesignError(f"table has {len(self.err)} records, expected {expect}")

    @property
    def n_records(self) -> int:
        return len(self.err)

    @property
    def runs_per_setting(self) -> int:
        return self.n_cv * self.n_learner

    def cell_cube(self) -> np.ndarray:
        """Errors reshaped to (n_settings, n_cv, n_learner)."""
        return self.err.reshape(self.n_settings, self.n_cv, self.n_learner)

    def subset_blocks(self, n_cv: int, n_learner: int | None = None) -> "ErrTable":
        """The exact sub-table using only the first blocks of each axis.

        Valid because every cell is independent of the rest of the plan;
        the result equals a fresh run at the smaller shape with prefix
        seed lists.
        """
        if n_cv < 1 or n_cv > self.n_cv:
            raise DesignError(f"cannot take {n_cv} of {self.n_cv} cv blocks")
        if self.variant == BCV:
            nl = self.n_learner if n_learner is None else n_learner
            if nl < 1 or nl > self.n_learner:
                raise DesignError(f"cannot take {nl} of {self.n_learner} learner blocks")
        else:
            if n_learner not in (None, 1):
                raise DesignError("only bcv tables have a learner axis")
            nl = 1
        keep = (self.block_i < n_cv) & (self.block_j < nl)
        sub_plan = None
        if self.plan is not None:
            if self.variant == BCV:
                sub_plan = DesignPlan(
                    BCV, self.plan.strategy,
                    cv_seeds=self.plan.cv_seeds[:n_cv],
                    learner_seeds=self.plan.learner_seeds[:nl],
                    master_seed=self.plan.master_seed,
                )
            elif self.variant == BCV_X0:
                sub_plan = DesignPlan(
                    BCV_X0, self.plan.strategy,
                    cv_seeds=self.plan.cv_seeds[:n_cv],
                    master_seed=self.plan.master_seed,
                )
            else:
                sub_plan = DesignPlan(
                    RCV, self.plan.strategy, n_reps=n_cv,
                    master_seed=self.plan.master_seed,
                    rcv_shared_within_rep=self.plan.rcv_shared_within_rep,
                )
        return ErrTable(
            variant=self.variant,
            n_settings=self.n_settings,
            n_cv=n_cv,
            n_learner=nl,
            setting_index=self.setting_index[keep],
            block_i=self.block_i[keep],
            block_j=self.block_j[keep],
            cv_seed=self.cv_seed[keep],
            learner_seed=self.learner_seed[keep],
            err=self.err[keep],
            grid=self.grid,
            plan=sub_plan,
            meta=dict(self.meta),
        )

    def setting_params(self, m: int) -> dict[str, Any]:
        if self.grid is None:
            return {}
        return self.grid.settings[m].params

    def to_csv(self, path_or_file) -> None:
        """Serialize in canonical row order."""
        own = isinstance(path_or_file, str)
        fh = open(path_or_file, "w", encoding="utf-8", newline="") if own else path_or_file
        try:
            writer = csv.writer(fh)
            hp_names = list(self.grid.param_names) if self.grid is not None else []
            if self.variant == RCV:
                coords = ["rep"]
            else:
                coords = ["cv_seed_index", "learner_seed_index"]
            writer.writerow(["setting_index", *hp_names, *coords, "cv_seed", "learner_seed", "err"])
            for r in range(self.n_records):
                m = int(self.setting_index[r])
                hp = [_csv_value(self.setting_params(m).get(name)) for name in hp_names]
                if self.variant == RCV:
                    coord_vals = [int(self.block_i[r])]
                else:
                    coord_vals = [int(self.block_i[r]), int(self.block_j[r])]
                writer.writerow(
                    [m, *hp, *coord_vals, int(self.cv_seed[r]), int(self.learner_seed[r]),
                     repr(float(self.err[r]))]
                )
        finally:
            if own:
                fh.close()


def _csv_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_csv_value(s: str) -> Any:
    if s == "true":
        return True
    if s == "false":
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def err_table_from_csv(path_or_file) -> ErrTable:
    """Rebuild a table written by :meth:`ErrTable.to_csv`.

    The grid is reconstructed from the hyperparameter columns (values and
    order as observed), which is enough to recompute every report from the
    table alone.
    """
    own = isinstance(path_or_file, str)
    fh = open(path_or_file, "r", encoding="utf-8", newline="") if own else path_or_file
    try:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    finally:
        if own:
            fh.close()
    if "rep" in header:
        variant = RCV
        hp_names = header[1:header.index("rep")]
    else:
        hp_names = header[1:header.index("cv_seed_index")]
        variant = None  # bcv vs bcv_x0 decided below
    setting_index, block_i, block_j, cv_seed, learner_seed, err = [], [], [], [], [], []
    params_of: dict[int, dict[str, Any]] = {}
    for row in rows:
        m = int(row[0])
        params_of.setdefault(m, dict(zip(hp_names, (_parse_csv_value(v) for v in row[1:1 + len(hp_names)]))))
        rest = row[1 + len(hp_names):]
        if variant == RCV:
            bi, bj = int(rest[0]), 0
            cv, lr, e = rest[1], rest[2], rest[3]
        else:
            bi, bj = int(rest[0]), int(rest[1])
            cv, lr, e = rest[2], rest[3], rest[4]
        setting_index.append(m)
        block_i.append(bi)
        block_j.append(bj)
        cv_seed.append(int(cv))
        learner_seed.append(int(lr))
        err.append(float(e))
    n_settings = max(setting_index) + 1
    n_cv = max(block_i) + 1
    n_learner = max(block_j) + 1
    if variant is None:
        variant = BCV if n_learner > 1 else BCV_X0
    grid = None
    if hp_names:
        values = tuple(
            tuple(dict.fromkeys(params_of[m][name] for m in sorted(params_of)))
            for name in hp_names
        )
        settings = tuple(Setting(m, params_of[m]) for m in sorted(params_of))
        grid = SettingGrid(tuple(hp_names), values, (), settings)
    return ErrTable(
        variant=variant,
        n_settings=n_settings,
        n_cv=n_cv,
        n_learner=n_learner,
        setting_index=np.array(setting_index, dtype=np.int64),
        block_i=np.array(block_i, dtype=np.int64),
        block_j=np.array(block_j, dtype=np.int64),
        cv_seed=np.array(cv_seed, dtype=np.uint64),
        learner_seed=np.array(learner_seed, dtype=np.uint64),
        err=np.array(err, dtype=np.float64),
        grid=grid,
    )


def _cv_error(
    dataset: Dataset,
    partition: FoldPartition,
    spec: LearnerSpec,
    learner_seed: int,
    loss: LossFn,
) -> float:
    """One pass over all folds; loss on the pooled out-of-fold predictions."""
    if dataset.task == CLASSIFICATION:
        pooled = np.empty(dataset.n_rows, dtype=np.int32)
    else:
        pooled = np.empty(dataset.n_rows, dtype=np.float64)
    for f in range(partition.k):
        held_out = partition.fold_indices(f)
        model = train(spec, dataset, partition.complement_indices(f),
                      derive_seed(learner_seed, [_DOM_FOLD, f]))
        pooled[held_out] = predict(model, held_out)
    return compute_loss(loss, pooled, dataset.target)


def run_design(
    dataset: Dataset,
    grid: SettingGrid,
    plan: DesignPlan,
    learner: LearnerSpec,
    loss: LossFn,
    threads: int = 1,
) -> ErrTable:
    """Execute every (setting, block/repetition) cell of the plan.

    Cells are independent jobs; ``threads`` only controls wall time, never
    content. Any cell failure aborts the run, because the downstream
    analysis requires the table to stay complete and balanced.
    """
    if loss.task != dataset.task:
        raise DesignError(f"loss {loss.kind!r} is for {loss.task}, dataset task is {dataset.task}")
    M = grid.size
    n_cv = plan.n_cv
    n_learner = plan.n_learner

    # Pre-derive every seed so scheduling cannot influence content.
    if plan.variant == BCV:
        cell_cv = lambda m, i, j: plan.cv_seeds[i]
        cell_learner = lambda m, i, j: plan.learner_seeds[j]
    elif plan.variant == BCV_X0:
        cell_cv = lambda m, i, j: plan.cv_seeds[i]
        cell_learner = lambda m, i, j: derive_seed(plan.master_seed, [_DOM_X0_LEARNER, i, m])
    else:
        if plan.rcv_shared_within_rep:
            cell_cv = lambda m, i, j: derive_seed(plan.master_seed, [_DOM_RCV_CV, i])
            cell_learner = lambda m, i, j: derive_seed(plan.master_seed, [_DOM_RCV_LEARNER, i])
        else:
            cell_cv = lambda m, i, j: derive_seed(plan.master_seed, [_DOM_RCV_CV, i, m])
            cell_learner = lambda m, i, j: derive_seed(plan.master_seed, [_DOM_RCV_LEARNER, i, m])

    # One partition per distinct cv seed, shared across cells.
    partitions: dict[int, FoldPartition] = {}

    def partition_for(seed: int) -> FoldPartition:
        part = partitions.get(seed)
        if part is None:
            part = partition_folds(dataset, plan.strategy, seed)
            partitions[seed] = part
        return part

    if plan.variant in (BCV, BCV_X0):
        for s in plan.cv_seeds:
            partition_for(s)

    cells = [
        (m, i, j)
        for m in range(M)
        for i in range(n_cv)
        for j in range(n_learner)
    ]

    specs = [learner.with_params(grid.settings[m].params) for m in range(M)]
    err = np.empty(len(cells), dtype=np.float64)
    cv_seed_col = np.empty(len(cells), dtype=np.uint64)
    learner_seed_col = np.empty(len(cells), dtype=np.uint64)

    def run_cell(pos: int) -> None:
        m, i, j = cells[pos]
        cv = cell_cv(m, i, j)
        lr = cell_learner(m, i, j)
        cv_seed_col[pos] = cv
        learner_seed_col[pos] = lr
        if plan.variant == RCV and not plan.rcv_shared_within_rep:
            part = partition_folds(dataset, plan.strategy, cv)  # fresh per cell
        else:
            part = partition_for(cv)
        err[pos] = _cv_error(dataset, part, specs[m], lr, loss)

    try:
        if threads <= 1:
            for pos in range(len(cells)):
                run_cell(pos)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run_cell, range(len(cells))))
    except Exception as exc:
        raise DesignError(f"design cell failed, aborting run: {exc}") from exc

    return ErrTable(
        variant=plan.variant,
        n_settings=M,
        n_cv=n_cv,
        n_learner=n_learner,
        setting_index=np.array([c[0] for c in cells], dtype=np.int64),
        block_i=np.array([c[1] for c in cells], dtype=np.int64),
        block_j=np.array([c[2] for c in cells], dtype=np.int64),
        cv_seed=cv_seed_col,
        learner_seed=learner_seed_col,
        err=err,
        grid=grid,
        plan=plan,
        meta={
            "dataset": dataset.name,
            "loss": loss.kind,
            "notation": plan.notation(),
            "k": plan.strategy.k,
            "sampling": plan.strategy.sampling,
        },
    )
