"""Tabular dataset ingestion for cross-validated tuning.

CSV files (RFC-4180-style, UTF-8, mandatory header row) are parsed into an
immutable :class:`Dataset`. Column typing is inferred: a column is numeric
iff every non-empty cell parses as a finite decimal real; anything else is
categorical. Rows containing an empty cell are dropped and counted, never
imputed, so that every partition of the same file sees the same fixed
instance set.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

CLASSIFICATION = "classification"
REGRESSION = "regression"

_TASKS = (CLASSIFICATION, REGRESSION)


def _parses_numeric(cell: str) -> bool:
    # Decimal-point reals only; inf/nan tokens are not data values.
    try:
        return math.isfinite(float(cell))
    except ValueError:
        return False


@dataclass(frozen=True)
class Dataset:
    """An in-memory feature table plus target, read-only after construction.

    ``features`` holds one float64 column per feature: parsed values for
    numeric columns, category codes for categorical ones. Codes index into
    ``category_levels[j]`` (levels sorted lexicographically, which is also
    the total order used for vote tie-breaking downstream). A classification
    target is stored as int codes into ``target_levels``.
    """

    name: str
    task: str
    feature_names: tuple[str, ...]
    features: np.ndarray
    categorical_mask: np.ndarray
    category_levels: tuple[tuple[str, ...] | None, ...]
    target: np.ndarray
    target_levels: tuple[str, ...] | None
    dropped_rows: int = 0

    def __post_init__(self) -> None:
        if self.task not in _TASKS:
            raise DataError(f"unknown task {self.task!r}")
        n, p = self.features.shape
        if n < 2:
            raise DataError(f"need at least 2 usable rows, got {n}")
        if p < 1:
            raise DataError("need at least 1 feature column")
        if len(self.target) != n:
            raise DataError("target length does not match feature rows")
        if self.task == CLASSIFICATION:
            if self.target_levels is None or len(self.target_levels) < 2:
                raise DataError("classification target needs >= 2 distinct labels")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_labels(self) -> int:
        return 0 if self.target_levels is None else len(self.target_levels)

    def fingerprint(self, rows: np.ndarray | None = None) -> str:
        """Stable hex digest of (name, schema, selected rows)."""
        h = hashlib.sha256()
        h.update(self.name.encode())
        h.update(",".join(self.feature_names).encode())
        if rows is None:
            h.update(b"all")
        else:
            h.update(np.asarray(rows, dtype=np.int64).tobytes())
        return h.hexdigest()


def load_csv(
    path: str,
    target_column: str,
    task: str,
    schema_overrides: dict[str, str] | None = None,
    name: str | None = None,
) -> Dataset:
    """Load a CSV file into a :class:`Dataset`.

    Rows with an empty cell in any used column are dropped (the count is
    recorded on the dataset). Column types are inferred from all non-empty
    cells, so reordering rows never changes the inferred schema.

    ``schema_overrides`` maps column names to ``"numeric"`` or
    ``"categorical"`` and wins over inference; overriding a column to
    numeric fails if any non-empty cell does not parse.
    """
    if task not in _TASKS:
        raise DataError(f"unknown task {task!r}")
    overrides = dict(schema_overrides or {})
    for col, kind in overrides.items():
        if kind not in ("numeric", "categorical"):
            raise DataError(f"schema override for {col!r} must be numeric or categorical")

    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except csv.Error as exc:
        raise DataError(f"{path}: malformed CSV: {exc}") from exc

    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    if target_column not in header:
        raise DataError(f"{path}: target column {target_column!r} not found")
    for col in overrides:
        if col not in header:
            raise DataError(f"{path}: schema override for unknown column {col!r}")

    n_cols = len(header)
    for line_no, row in enumerate(rows, start=2):
        if len(row) != n_cols:
            raise DataError(f"{path}: row {line_no} has {len(row)} fields, expected {n_cols}")

    target_pos = header.index(target_column)
    feature_names = tuple(h for i, h in enumerate(header) if i != target_pos)
    feature_pos = [i for i in range(n_cols) if i != target_pos]

    kept = [row for row in rows if all(cell.strip() != "" for cell in row)]
    dropped = len(rows) - len(kept)
    if len(kept) == 0:
        raise DataError(f"{path}: zero usable rows after dropping incomplete rows")

    # Infer on every non-empty cell of the raw file so inference is
    # independent of which rows other columns caused to be dropped.
    numeric_col: list[bool] = []
    for j in feature_pos:
        col_name = header[j]
        cells = [row[j].strip() for row in rows if row[j].strip() != ""]
        if col_name in overrides:
            is_num = overrides[col_name] == "numeric"
            if is_num and not all(_parses_numeric(c) for c in cells):
                raise DataError(f"{path}: column {col_name!r} overridden to numeric but has non-numeric cells")
        else:
            is_num = len(cells) > 0 and all(_parses_numeric(c) for c in cells)
        numeric_col.append(is_num)

    n = len(kept)
    p = len(feature_pos)
    features = np.empty((n, p), dtype=np.float64)
    cat_mask = np.zeros(p, dtype=bool)
    levels: list[tuple[str, ...] | None] = []
    for col_idx, j in enumerate(feature_pos):
        cells = [row[j].strip() for row in kept]
        if numeric_col[col_idx]:
            features[:, col_idx] = [float(c) for c in cells]
            levels.append(None)
        else:
            cat_mask[col_idx] = True
            lv = tuple(sorted(set(cells)))
            code = {v: k for k, v in enumerate(lv)}
            features[:, col_idx] = [code[c] for c in cells]
            levels.append(lv)

    target_cells = [row[target_pos].strip() for row in kept]
    if task == CLASSIFICATION:
        target_levels = tuple(sorted(set(target_cells)))
        code = {v: k for k, v in enumerate(target_levels)}
        target = np.array([code[c] for c in target_cells], dtype=np.int32)
    else:
        if not all(_parses_numeric(c) for c in target_cells):
            raise DataError(f"{path}: regression target {target_column!r} has non-numeric cells")
        target_levels = None
        target = np.array([float(c) for c in target_cells], dtype=np.float64)

    features.setflags(write=False)
    cat_mask.setflags(write=False)
    target.setflags(write=False)
    return Dataset(
        name=name if name is not None else str(path),
        task=task,
        feature_names=feature_names,
        features=features,
        categorical_mask=cat_mask,
        category_levels=tuple(levels),
        target=target,
        target_levels=target_levels,
        dropped_rows=dropped,
    )
