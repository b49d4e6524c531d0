"""Seeded K-fold partitions under simple-random or stratified subsampling.

A partition is a pure function of (dataset, strategy, seed): the seed feeds
a PCG32 stream (see :mod:`blockedcv.rng`), indices are shuffled with
Fisher-Yates and chunked into k folds whose sizes differ by at most one.
Which folds receive the leftover instances rotates with a seed-derived
offset, so the marginal probability that a given instance lands in a given
fold is exactly 1/k for every n.

Stratified sampling (STS) shuffles within each stratum, concatenates the
strata and deals the combined sequence round-robin starting at a
seed-derived offset; this balances fold sizes globally and within every
stratum simultaneously. Classification stratifies on the label; regression
stratifies on k quantile bins of the target.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import CLASSIFICATION, Dataset
from .errors import PartitionError
from .rng import Pcg32, derive_seed

SRS = "SRS"
STS = "STS"

_DOM_SHUFFLE = 0x51
_DOM_OFFSET = 0x52
_DOM_STRATUM = 0x53


@dataclass(frozen=True)
class PartitionStrategy:
    """Fold count plus sampling type, held fixed across a tuning run."""

    k: int
    sampling: str = SRS

    def __post_init__(self) -> None:
        if self.k < 2:
            raise PartitionError(f"fold count must be >= 2, got {self.k}")
        if self.sampling not in (SRS, STS):
            raise PartitionError(f"sampling must be {SRS!r} or {STS!r}, got {self.sampling!r}")

    def notation(self) -> str:
        return f"{self.k}-fold {self.sampling}"


@dataclass(frozen=True)
class FoldPartition:
    """Per-instance fold assignment produced by a seeded strategy."""

    fold_of: np.ndarray
    cv_seed: int
    strategy: PartitionStrategy

    @property
    def k(self) -> int:
        return self.strategy.k

    @property
    def n(self) -> int:
        return len(self.fold_of)

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def complement_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def partition_folds(dataset: Dataset, strategy: PartitionStrategy, cv_seed: int) -> FoldPartition:
    """Assign every instance of ``dataset`` to one of k folds.

    Identical inputs give identical output on every platform. Fold sizes
    differ by at most one; under STS the same holds within every stratum
    (strata smaller than k simply spread over distinct folds).
    """
    n = dataset.n_rows
    k = strategy.k
    if k > n:
        raise PartitionError(f"k={k} exceeds the {n} available instances")

    fold_of = np.empty(n, dtype=np.int32)
    offset = derive_seed(cv_seed, [_DOM_OFFSET]) % k

    if strategy.sampling == SRS:
        order = list(range(n))
        Pcg32(derive_seed(cv_seed, [_DOM_SHUFFLE])).shuffle(order)
        # Contiguous chunks; the extra instances go to folds starting at
        # the seed-derived offset so P(instance -> fold f) = 1/k exactly.
        base, extra = divmod(n, k)
        pos = 0
        for f in range(k):
            size = base + (1 if (f - offset) % k < extra else 0)
            for idx in order[pos:pos + size]:
                fold_of[idx] = f
            pos += size
    else:
        strata = _strata(dataset, k)
        pos = 0
        for s_idx, stratum in enumerate(strata):
            members = list(stratum)
            Pcg32(derive_seed(cv_seed, [_DOM_STRATUM, s_idx])).shuffle(members)
            for t, idx in enumerate(members):
                fold_of[idx] = (offset + pos + t) % k
            pos += len(members)

    fold_of.setflags(write=False)
    return FoldPartition(fold_of=fold_of, cv_seed=cv_seed, strategy=strategy)


def _strata(dataset: Dataset, k: int) -> list[np.ndarray]:
    """Strata as index arrays: label groups, or k quantile bins of the target."""
    if dataset.task == CLASSIFICATION:
        return [np.flatnonzero(dataset.target == code) for code in range(dataset.n_labels)]
    y = dataset.target
    edges = np.quantile(y, [q / k for q in range(1, k)])
    bins = np.searchsorted(edges, y, side="left")
    return [np.flatnonzero(bins == b) for b in range(k) if np.any(bins == b)]


def partition_to_csv(partition: FoldPartition, path: str) -> None:
    """Dump (instance_index, fold) rows for audit."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_index", "fold"])
        for i, f in enumerate(partition.fold_of):
            writer.writerow([i, int(f)])
