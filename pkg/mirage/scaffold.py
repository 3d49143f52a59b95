# -*- coding: utf-8 -*-
"""
Scaffolded classifier: the biased model on real-looking rows, an
innocuous model on perturbation-looking rows.
"""
import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DimensionMismatch
from .forest import ForestParams, RandomForest, forest_train
from .lime import sample_perturbations_batch
from .types import as_predict_fn

logger = logging.getLogger(__name__)

PERTURBATIONS_PER_ROW = 10
# deep enough to isolate the value spikes of discrete columns
DISCRIMINATOR_PARAMS = ForestParams(max_depth=20)


@dataclass(frozen=True)
class ScaffoldClassifier:
    """
    Composite classifier routed by an out-of-distribution discriminator.

    Attributes:
        biased: Model used when the discriminator calls a row real.
        unbiased: Model used for every other row.
        discriminator: Forest scoring how real a row looks.
        threshold: Rows with score >= threshold go to the biased model.
    """
    biased: Any
    unbiased: Any
    discriminator: RandomForest
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")

    def routes_to_biased(self, X: np.ndarray) -> np.ndarray:
        return self.discriminator.predict_proba(X) >= self.threshold

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        route = self.routes_to_biased(X)
        out = np.empty(len(X))
        if route.any():
            out[route] = as_predict_fn(self.biased)(X[route])
        if (~route).any():
            out[~route] = as_predict_fn(self.unbiased)(X[~route])
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


def scaffold_predict(scaffold: ScaffoldClassifier, x: np.ndarray) -> float:
    """Scaffold output for one row."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != scaffold.discriminator.n_features:
        raise DimensionMismatch(
            f"row of shape {x.shape}, scaffold expects "
            f"({scaffold.discriminator.n_features},)"
        )
    return float(scaffold.predict_proba(x[None, :])[0])


def build_scaffold(
    train_rows: np.ndarray,
    biased: Any,
    unbiased: Any,
    forest_params: ForestParams = DISCRIMINATOR_PARAMS,
    perturbations_per_row: int = PERTURBATIONS_PER_ROW,
    threshold: float = 0.5,
    seed: int = 0,
) -> ScaffoldClassifier:
    """
    Train the discriminator on real rows against LIME-style perturbations
    of those rows and wrap both models around it.

    Args:
        train_rows: Real rows in model space.
        biased: Model shown on real data.
        unbiased: Model shown to the explainer.
        forest_params: Discriminator hyperparameters.
        perturbations_per_row: Perturbations drawn around every real row.
        threshold: Routing threshold.
        seed: Seed of the perturbation draws.

    Returns:
        ScaffoldClassifier: Ready-to-use scaffold.
    """
    if perturbations_per_row < 1:
        raise ValueError("perturbations_per_row must be >= 1")
    fake = sample_perturbations_batch(train_rows, perturbations_per_row, seed)
    forest = forest_train(train_rows, fake, forest_params)
    logger.info(
        "Scaffold discriminator trained on %d real and %d perturbed rows",
        len(train_rows), len(fake),
    )
    return ScaffoldClassifier(biased, unbiased, forest, threshold)
