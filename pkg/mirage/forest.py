# -*- coding: utf-8 -*-
"""
Random forest used as the real-versus-perturbation discriminator.

Class 1 is "real data"; every node stores the fraction of real rows among
the training rows that reached it, so a forest score is the mean leaf
fraction across trees.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DataError, DimensionMismatch, EmptyClass

logger = logging.getLogger(__name__)

MAX_WORKERS = 8
FORMAT = "mirage.forest"
VERSION = 1
LEAF = -1


@dataclass(frozen=True)
class ForestParams:
    """
    Forest hyperparameters.

    Attributes:
        n_trees: Number of trees.
        max_depth: Depth limit; a depth-0 tree is a single leaf.
        max_features: Columns considered per split; None means floor(√d).
        min_samples_split: Smallest node that may be split.
        bootstrap: Resample rows with replacement per tree.
        seed: Seed of bootstraps and column subsampling.
    """
    n_trees: int = 100
    max_depth: int = 8
    max_features: Optional[int] = None
    min_samples_split: int = 2
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")


@dataclass(frozen=True)
class DecisionTree:
    """
    Axis-aligned tree stored as a node table; node 0 is the root.

    Rows with `x[feature] <= threshold` go left. Leaves have feature -1.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        n = len(self.feature)
        for name in ("threshold", "left", "right", "value"):
            if len(getattr(self, name)) != n:
                raise DataError(f"tree column '{name}' has the wrong length")
        value = np.asarray(self.value, dtype=float)
        if n == 0 or value.min() < 0.0 or value.max() > 1.0:
            raise DataError("tree leaf fractions must lie in [0, 1]")
        object.__setattr__(self, "feature", np.asarray(self.feature, np.int64))
        object.__setattr__(self, "threshold", np.asarray(self.threshold, float))
        object.__setattr__(self, "left", np.asarray(self.left, np.int64))
        object.__setattr__(self, "right", np.asarray(self.right, np.int64))
        object.__setattr__(self, "value", value)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feature = self.feature[node]
            internal = feature >= 0
            if not internal.any():
                return self.value[node]
            go_left = X[rows, np.maximum(feature, 0)] <= self.threshold[node]
            step = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, step, node)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }


@dataclass(frozen=True)
class RandomForest:
    """
    Trained forest.

    Attributes:
        trees: Trees, order irrelevant to predictions.
        n_features: Width of the rows it was trained on.
        params: Hyperparameters used for training.
    """
    trees: tuple[DecisionTree, ...]
    n_features: int
    params: ForestParams = ForestParams()

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Real-data score per row: mean leaf fraction across trees."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"input has {X.shape[1]} columns, forest expects {self.n_features}"
            )
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "n_features": self.n_features,
            "params": asdict(self.params),
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RandomForest":
        if not isinstance(data, dict) or data.get("format") != FORMAT:
            raise DataError("not a serialized forest")
        if data.get("version") != VERSION:
            raise DataError(f"unsupported forest version {data.get('version')}")
        try:
            trees = tuple(DecisionTree(**tree) for tree in data["trees"])
            params = ForestParams(**data.get("params", {}))
            return cls(trees, int(data["n_features"]), params)
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed forest file: {e}") from e


class _TreeBuilder:
    """Grows one tree into growable node lists."""

    def __init__(self, params: ForestParams, n_features: int, rng):
        self.params = params
        self.rng = rng
        self.n_candidates = min(
            n_features,
            params.max_features or max(1, int(np.sqrt(n_features))),
        )
        self.n_features = n_features
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _add(self, fraction: float) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(fraction)
        return len(self.feature) - 1

    def grow(self, X: np.ndarray, y: np.ndarray, depth: int = 0) -> int:
        node = self._add(float(y.mean()))
        if (
            depth >= self.params.max_depth
            or len(y) < self.params.min_samples_split
            or y.min() == y.max()
        ):
            return node
        candidates = self.rng.choice(
            self.n_features, size=self.n_candidates, replace=False
        )
        split = best_split(X, y, np.sort(candidates))
        if split is None:
            return node
        column, threshold = split
        mask = X[:, column] <= threshold
        self.feature[node] = int(column)
        self.threshold[node] = float(threshold)
        self.left[node] = self.grow(X[mask], y[mask], depth + 1)
        self.right[node] = self.grow(X[~mask], y[~mask], depth + 1)
        return node

    def build(self) -> DecisionTree:
        return DecisionTree(
            np.array(self.feature), np.array(self.threshold),
            np.array(self.left), np.array(self.right), np.array(self.value),
        )


def best_split(
    X: np.ndarray, y: np.ndarray, columns: np.ndarray
) -> Optional[tuple[int, float]]:
    """
    Lowest weighted Gini impurity split over the given columns.

    Thresholds are midpoints between consecutive distinct values; ties go
    to the earlier column and the lower threshold. Returns None when every
    column is constant.
    """
    best, best_score = None, np.inf
    n = len(y)
    for column in columns:
        order = np.argsort(X[:, column], kind="stable")
        values = X[order, column]
        labels = y[order]
        valid = np.flatnonzero(values[:-1] < values[1:])
        if len(valid) == 0:
            continue
        n_left = valid + 1.0
        n_right = n - n_left
        pos_left = np.cumsum(labels)[valid]
        pos_right = labels.sum() - pos_left
        p_left = pos_left / n_left
        p_right = pos_right / n_right
        score = (
            n_left * 2.0 * p_left * (1.0 - p_left)
            + n_right * 2.0 * p_right * (1.0 - p_right)
        )
        i = int(np.argmin(score))
        if score[i] < best_score - 1e-12:
            lo, hi = values[valid[i]], values[valid[i] + 1]
            threshold = 0.5 * (lo + hi)
            if threshold >= hi:
                threshold = lo
            best, best_score = (int(column), float(threshold)), score[i]
    return best


def forest_train(
    real: np.ndarray, fake: np.ndarray, params: ForestParams = ForestParams()
) -> RandomForest:
    """
    Train the discriminator on real rows (class 1) against perturbations.

    Args:
        real: (n_real, d) rows from the data distribution.
        fake: (n_fake, d) perturbation rows.
        params: Forest hyperparameters.

    Returns:
        RandomForest: Trained forest.

    Raises:
        EmptyClass: Either class has no rows.
    """
    real = np.atleast_2d(np.asarray(real, dtype=float))
    fake = np.atleast_2d(np.asarray(fake, dtype=float))
    if real.size == 0 or fake.size == 0:
        raise EmptyClass("discriminator needs both real and fake rows")
    if real.shape[1] != fake.shape[1]:
        raise DimensionMismatch("real and fake rows differ in width")
    X = np.vstack([real, fake])
    y = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    n, d = X.shape
    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)

    def grow(seed) -> DecisionTree:
        rng = np.random.default_rng(seed)
        rows = rng.integers(0, n, n) if params.bootstrap else np.arange(n)
        builder = _TreeBuilder(params, d, rng)
        builder.grow(X[rows], y[rows])
        return builder.build()

    with ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
        trees = tuple(executor.map(grow, seeds))
    logger.info(
        "Trained forest: %d trees on %d real / %d fake rows",
        len(trees), len(real), len(fake),
    )
    return RandomForest(trees, d, params)


def forest_predict(forest: RandomForest, x: np.ndarray) -> float:
    """Real-data score of one row."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != forest.n_features:
        raise DimensionMismatch(
            f"row of shape {x.shape}, forest expects ({forest.n_features},)"
        )
    return float(forest.predict_proba(x[None, :])[0])


def discriminator_accuracy(
    forest: RandomForest,
    real: np.ndarray,
    fake: np.ndarray,
    threshold: float = 0.5,
) -> float:
    """Accuracy of calling rows real iff their score >= threshold."""
    hits = np.sum(forest.predict_proba(real) >= threshold)
    hits += np.sum(forest.predict_proba(fake) < threshold)
    return float(hits / (len(real) + len(fake)))
