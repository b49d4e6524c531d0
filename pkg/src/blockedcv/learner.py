"""Seeded predictive learners and loss functions.

The built-in learner is a CART random forest over the exhaustive binary
splits described in :mod:`blockedcv._forest`; a trivial constant-predictor
learner ("constant") is also registered, mainly as a cheap stand-in in
tests and as the smallest example of adding a learner kind.

Training is fully deterministic: tree t of a forest draws from a PCG32
stream seeded with ``derive_seed(learner_seed, [t])``, so a forest is a
pure function of (spec, training rows, learner_seed) regardless of how the
surrounding run is parallelized.

Hyperparameter names follow the conventional dotted spelling used in
config files: ``mtry``, ``min.node.size``, ``replace``,
``sample.fraction``, ``num.trees``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import _forest
from .data import CLASSIFICATION, REGRESSION, Dataset
from .errors import LearnerError
from .rng import derive_seed

RANDOM_FOREST = "random_forest"
CONSTANT = "constant"

MISCLASSIFICATION = "misclassification"
RMSE = "rmse"
MAE = "mae"

_LOSSES = {
    MISCLASSIFICATION: CLASSIFICATION,
    RMSE: REGRESSION,
    MAE: REGRESSION,
}


@dataclass(frozen=True)
class LossFn:
    """A loss kind bound to the task it applies to."""

    kind: str

    def __post_init__(self) -> None:
        if self.kind not in _LOSSES:
            raise LearnerError(f"unknown loss {self.kind!r}; choose from {sorted(_LOSSES)}")

    @property
    def task(self) -> str:
        return _LOSSES[self.kind]


def default_loss(task: str) -> LossFn:
    """Misclassification rate for classification, RMSE for regression."""
    return LossFn(MISCLASSIFICATION if task == CLASSIFICATION else RMSE)


def compute_loss(loss: LossFn, predictions: np.ndarray, truth: np.ndarray) -> float:
    """Evaluate ``loss`` over aligned prediction/truth vectors."""
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if len(predictions) != len(truth):
        raise LearnerError(f"length mismatch: {len(predictions)} predictions vs {len(truth)} truths")
    if len(predictions) == 0:
        raise LearnerError("cannot compute a loss over empty vectors")
    if loss.kind == MISCLASSIFICATION:
        return float(np.count_nonzero(predictions != truth)) / len(truth)
    diff = predictions.astype(np.float64) - truth.astype(np.float64)
    if loss.kind == RMSE:
        return math.sqrt(float(np.mean(diff * diff)))
    return float(np.mean(np.abs(diff)))


@dataclass(frozen=True)
class LearnerSpec:
    """A learner kind plus its full hyperparameter map."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def with_params(self, overrides: dict[str, Any]) -> "LearnerSpec":
        merged = dict(self.params)
        merged.update(overrides)
        return LearnerSpec(self.kind, merged)


@dataclass(frozen=True)
class RfHyperparams:
    mtry: int
    min_node_size: int = 1
    replace: bool = True
    sample_fraction: float = 1.0
    num_trees: int = 500

    def __post_init__(self) -> None:
        if self.mtry < 1:
            raise LearnerError(f"mtry must be >= 1, got {self.mtry}")
        if self.min_node_size < 1:
            raise LearnerError(f"min.node.size must be >= 1, got {self.min_node_size}")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise LearnerError(f"sample.fraction must be in (0, 1], got {self.sample_fraction}")
        if self.num_trees < 1:
            raise LearnerError(f"num.trees must be >= 1, got {self.num_trees}")

    @classmethod
    def from_params(cls, params: dict[str, Any]) -> "RfHyperparams":
        known = {
            "mtry": "mtry",
            "min.node.size": "min_node_size",
            "replace": "replace",
            "sample.fraction": "sample_fraction",
            "num.trees": "num_trees",
        }
        kwargs: dict[str, Any] = {}
        for key, value in params.items():
            if key not in known:
                raise LearnerError(f"random_forest does not recognize hyperparameter {key!r}")
            kwargs[known[key]] = value
        if "mtry" not in kwargs:
            raise LearnerError("random_forest requires mtry")
        try:
            return cls(
                mtry=int(kwargs["mtry"]),
                min_node_size=int(kwargs.get("min_node_size", 1)),
                replace=bool(kwargs.get("replace", True)),
                sample_fraction=float(kwargs.get("sample_fraction", 1.0)),
                num_trees=int(kwargs.get("num_trees", 500)),
            )
        except (TypeError, ValueError) as exc:
            raise LearnerError(f"bad random_forest hyperparameter value: {exc}") from exc


class ForestModel:
    """Immutable fitted forest bound to the dataset it was trained on."""

    def __init__(self, dataset: Dataset, seed: int, fingerprint: str, trees: tuple, n_nodes: np.ndarray) -> None:
        self.dataset = dataset
        self.learner_seed = seed
        self.fingerprint = fingerprint
        self._trees = trees
        self.num_nodes_per_tree = n_nodes

    def predict(self, query_rows: np.ndarray) -> np.ndarray:
        rows = _check_rows(self.dataset, query_rows, "query")
        feat, thr, left, right, leaf = self._trees
        is_class = self.dataset.task == CLASSIFICATION
        out = _forest.predict_forest(
            self.dataset.features, self.dataset.categorical_mask, rows,
            feat, thr, left, right, leaf, is_class, self.dataset.n_labels,
        )
        return out.astype(np.int32) if is_class else out

    def leaves_per_tree(self) -> np.ndarray:
        """Leaf count of every tree (diagnostic)."""
        feat = self._trees[0]
        return np.array(
            [int(np.count_nonzero(feat[t, :n] == -1)) for t, n in enumerate(self.num_nodes_per_tree)],
            dtype=np.int64,
        )


class ConstantModel:
    """Predicts the training majority label or mean target everywhere."""

    def __init__(self, dataset: Dataset, seed: int, fingerprint: str, value: float) -> None:
        self.dataset = dataset
        self.learner_seed = seed
        self.fingerprint = fingerprint
        self.value = value

    def predict(self, query_rows: np.ndarray) -> np.ndarray:
        rows = _check_rows(self.dataset, query_rows, "query")
        if self.dataset.task == CLASSIFICATION:
            return np.full(len(rows), int(self.value), dtype=np.int32)
        return np.full(len(rows), self.value, dtype=np.float64)


TrainedModel = ForestModel | ConstantModel


def _check_rows(dataset: Dataset, rows: np.ndarray, what: str) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64)
    if rows.ndim != 1:
        raise LearnerError(f"{what} rows must be a 1-d index array")
    if len(rows) > 0 and (rows.min() < 0 or rows.max() >= dataset.n_rows):
        raise LearnerError(f"{what} row index out of range for dataset of {dataset.n_rows} rows")
    return rows


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _train_random_forest(spec: LearnerSpec, dataset: Dataset, train_rows: np.ndarray, seed: int) -> ForestModel:
    hp = RfHyperparams.from_params(spec.params)
    p = dataset.n_features
    if hp.mtry > p:
        raise LearnerError(f"mtry={hp.mtry} exceeds the {p} available features")
    n_train = len(train_rows)
    n_sample = max(1, _round_half_up(hp.sample_fraction * n_train))

    tree_seeds = np.array(
        [derive_seed(seed, [t]) for t in range(hp.num_trees)], dtype=np.uint64
    )
    n_cat = np.array(
        [len(lv) if lv is not None else 0 for lv in dataset.category_levels],
        dtype=np.int64,
    )
    max_cat = int(n_cat.max()) if n_cat.size and n_cat.max() > 0 else 1
    is_class = dataset.task == CLASSIFICATION
    if is_class:
        y_class = dataset.target.astype(np.int32)
        y_reg = np.zeros(1, dtype=np.float64)
    else:
        y_class = np.zeros(1, dtype=np.int32)
        y_reg = dataset.target.astype(np.float64)

    feat, thr, left, right, leaf, n_nodes = _forest.grow_forest(
        dataset.features, dataset.categorical_mask, n_cat, max_cat,
        y_class, y_reg, is_class, dataset.n_labels,
        train_rows, tree_seeds, n_sample, hp.mtry, hp.min_node_size, hp.replace,
    )
    return ForestModel(
        dataset, seed, dataset.fingerprint(train_rows), (feat, thr, left, right, leaf), n_nodes
    )


def _train_constant(spec: LearnerSpec, dataset: Dataset, train_rows: np.ndarray, seed: int) -> ConstantModel:
    # Accepts and ignores any hyperparameter map so it can stand in for a
    # real learner under an arbitrary grid (baseline / test bench).
    y = dataset.target[train_rows]
    if dataset.task == CLASSIFICATION:
        counts = np.bincount(y, minlength=dataset.n_labels)
        value = float(np.argmax(counts))  # first max = smallest label code
    else:
        value = float(np.mean(y))
    return ConstantModel(dataset, seed, dataset.fingerprint(train_rows), value)


_TRAINERS = {
    RANDOM_FOREST: _train_random_forest,
    CONSTANT: _train_constant,
}


def learner_kinds() -> tuple[str, ...]:
    return tuple(sorted(_TRAINERS))


def train(spec: LearnerSpec, dataset: Dataset, train_rows: np.ndarray, learner_seed: int) -> TrainedModel:
    """Fit ``spec`` on the given rows. Deterministic in all arguments."""
    if spec.kind not in _TRAINERS:
        raise LearnerError(f"unknown learner kind {spec.kind!r}; choose from {learner_kinds()}")
    rows = _check_rows(dataset, train_rows, "training")
    if len(rows) == 0:
        raise LearnerError("training set is empty")
    return _TRAINERS[spec.kind](spec, dataset, rows, learner_seed)


def predict(model: TrainedModel, query_rows: np.ndarray) -> np.ndarray:
    """Predictions for rows of the model's dataset (codes for classification)."""
    return model.predict(query_rows)
