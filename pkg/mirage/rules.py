# -*- coding: utf-8 -*-
"""Hard-coded rule classifiers: the biased model and its innocuous cover."""
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DimensionMismatch
from .tabular import TabularDataset


@dataclass(frozen=True)
class OneFeature:
    """Predict 1 iff `x[column] >= threshold` (model space)."""
    column: int
    threshold: float


@dataclass(frozen=True)
class Xor:
    """
    Predict 1 iff exactly one of two binarized columns is set.

    Each column is binarized at its cut (model space); the factory places
    the cuts at 0.5 in original units.
    """
    column_a: int
    column_b: int
    cut_a: float = 0.5
    cut_b: float = 0.5


RuleKind = Union[OneFeature, Xor]


@dataclass(frozen=True)
class RuleClassifier:
    """
    Rule over model-space rows emitting exact 0/1 outputs.

    Attributes:
        kind: The rule.
        n_features: Expected row width.
    """
    kind: RuleKind
    n_features: int

    def __post_init__(self):
        columns = (
            (self.kind.column,) if isinstance(self.kind, OneFeature)
            else (self.kind.column_a, self.kind.column_b)
        )
        for column in columns:
            if not 0 <= column < self.n_features:
                raise DimensionMismatch(
                    f"rule column {column} outside 0..{self.n_features - 1}"
                )

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"input has {X.shape[1]} columns, rule expects {self.n_features}"
            )
        kind = self.kind
        if isinstance(kind, OneFeature):
            return (X[:, kind.column] >= kind.threshold).astype(float)
        a = X[:, kind.column_a] >= kind.cut_a
        b = X[:, kind.column_b] >= kind.cut_b
        return (a != b).astype(float)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).astype(np.int64)


def rule_predict(rule: RuleClassifier, x: np.ndarray) -> int:
    """Rule output for a single row."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected one row, got shape {x.shape}")
    return int(rule.predict_proba(x[None, :])[0])


def _model_space(dataset: TabularDataset, column: int, value: float) -> float:
    return float((value - dataset.means[column]) / dataset.stds[column])


def _resolve(dataset: TabularDataset, column: Union[int, str]) -> int:
    if isinstance(column, str):
        return dataset.column_index(column)
    return int(column)


def one_feature_rule(
    dataset: TabularDataset, column: Union[int, str], threshold: float = 0.5
) -> RuleClassifier:
    """
    Rule predicting from one column alone.

    Args:
        dataset: Provides the standardization of the column.
        column: Column index or name.
        threshold: Cut in original units.
    """
    j = _resolve(dataset, column)
    return RuleClassifier(
        OneFeature(j, _model_space(dataset, j, threshold)), dataset.n_features
    )


def xor_rule(
    dataset: TabularDataset, column_a: Union[int, str], column_b: Union[int, str]
) -> RuleClassifier:
    """Xor of two columns binarized at 0.5 in original units."""
    a = _resolve(dataset, column_a)
    b = _resolve(dataset, column_b)
    return RuleClassifier(
        Xor(a, b, _model_space(dataset, a, 0.5), _model_space(dataset, b, 0.5)),
        dataset.n_features,
    )
