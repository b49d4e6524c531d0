"""Shared test helpers: synthetic datasets built directly or via CSV."""

from __future__ import annotations

import csv

import numpy as np
import pytest

from blockedcv.data import CLASSIFICATION, REGRESSION, Dataset


def make_dataset(
    n: int,
    p: int,
    task: str = CLASSIFICATION,
    seed: int = 0,
    n_labels: int = 2,
    n_categorical: int = 0,
    cat_levels: int = 3,
    integer_targets: bool = False,
    name: str = "synthetic",
) -> Dataset:
    """Random dataset with a learnable signal on feature 0."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    cat_mask = np.zeros(p, dtype=bool)
    levels: list[tuple[str, ...] | None] = [None] * p
    for j in range(p - n_categorical, p):
        cat_mask[j] = True
        levels[j] = tuple(f"c{v}" for v in range(cat_levels))
        X[:, j] = rng.integers(0, cat_levels, size=n)
    score = X[:, 0] + 0.5 * rng.normal(size=n)
    if task == CLASSIFICATION:
        edges = np.quantile(score, [i / n_labels for i in range(1, n_labels)])
        y = np.searchsorted(edges, score).astype(np.int32)
        target_levels = tuple(f"L{i}" for i in range(n_labels))
    else:
        y = score.astype(np.float64)
        if integer_targets:
            y = np.round(3 * y)
        target_levels = None
    return Dataset(
        name=name,
        task=task,
        feature_names=tuple(f"f{j}" for j in range(p)),
        features=X,
        categorical_mask=cat_mask,
        category_levels=tuple(levels),
        target=y,
        target_levels=target_levels,
    )


def write_classification_csv(path, n: int = 120, p: int = 21, seed: int = 5, flip: float = 0.1):
    """A classification CSV with hyperparameter-sensitive structure."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    logit = 1.2 * X[:, 0] - 0.8 * X[:, 1]
    if p >= 4:
        logit = logit + 0.9 * X[:, 2] * X[:, 3]
    if p >= 5:
        logit = logit + 0.4 * X[:, 4]
    y = (logit > 0).astype(int)
    flip_mask = rng.random(n) < flip
    y[flip_mask] = 1 - y[flip_mask]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(p)] + ["label"])
        for i in range(n):
            writer.writerow([repr(float(v)) for v in X[i]] + [("m" if y[i] else "r")])
    return path


@pytest.fixture
def small_classification(tmp_path):
    return write_classification_csv(tmp_path / "clf.csv", n=80, p=6, seed=11)
