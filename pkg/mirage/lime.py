# -*- coding: utf-8 -*-
"""
Tabular LIME without discretization.

Perturbations are drawn from N(x, I) in model space, weighted with an
exponential kernel and explained by a weighted ridge regression whose
intercept is not penalized. The same sampler feeds the discriminator.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    ConvergenceFailure, DimensionMismatch, EmptyList, SingularSystem, TooFewSamples,
)
from .seeds import derive_seed
from .types import PredictFn, Predictor, as_predict_fn

logger = logging.getLogger(__name__)

MAX_WORKERS = 8
# Coefficient magnitudes equal to this many decimals rank as ties.
_RANK_DECIMALS = 12
AXES = ("x", "y", "z")


@dataclass(frozen=True)
class LimeConfig:
    """
    Explainer settings.

    Attributes:
        n_samples: Perturbations per explanation; at least d + 2.
        kernel_width: Kernel width; None means 0.75 * sqrt(d).
        ridge_alpha: Ridge penalty on the coefficients.
        seed: Seed of the perturbation sampler.
    """
    n_samples: int = 5000
    kernel_width: Optional[float] = None
    ridge_alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.kernel_width is not None and self.kernel_width <= 0:
            raise ValueError(f"kernel_width must be > 0, got {self.kernel_width}")
        if self.ridge_alpha < 0:
            raise ValueError(f"ridge_alpha must be >= 0, got {self.ridge_alpha}")

    def width_for(self, d: int) -> float:
        if self.kernel_width is not None:
            return float(self.kernel_width)
        return 0.75 * np.sqrt(d)


@dataclass(frozen=True)
class LimeExplanation:
    """
    Local linear surrogate around one instance.

    Attributes:
        intercept: Surrogate intercept.
        coefficients: Per-column attributions.
        ranked_features: Columns by descending |coefficient|, ties by index.
        r2_local: Kernel-weighted R² of the surrogate.
    """
    intercept: float
    coefficients: np.ndarray
    ranked_features: tuple[int, ...]
    r2_local: float

    def to_dict(self, instance_index: Optional[int] = None) -> dict:
        out = {
            "intercept": self.intercept,
            "coefficients": self.coefficients.tolist(),
            "ranked_features": list(self.ranked_features),
            "r2_local": self.r2_local,
        }
        if instance_index is not None:
            out["instance_index"] = instance_index
        return out


@dataclass(frozen=True)
class PcaProjection:
    """
    Two-source PCA projection for scatter plots.

    Attributes:
        coordinates: (n, k) projected rows, real rows first.
        source: Length-n labels, 1 for real rows and 0 for perturbations.
        components: (k, d) orthonormal component vectors.
        explained_variance: Eigenvalue of each component.
        explained_variance_ratio: Eigenvalues over the total variance.
        mean: Column means removed before projecting.
    """
    coordinates: np.ndarray
    source: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray

    def to_text(self) -> str:
        """Whitespace-separated coordinate columns and `source`, with a header."""
        k = self.coordinates.shape[1]
        axes = list(AXES[:k]) if k <= len(AXES) else [f"pc{i + 1}" for i in range(k)]
        lines = [" ".join(axes + ["source"])]
        for row, label in zip(self.coordinates, self.source):
            values = " ".join(repr(float(v)) for v in row)
            lines.append(f"{values} {'real' if label else 'perturbation'}")
        return "\n".join(lines) + "\n"


def sample_perturbations(x: np.ndarray, n: int, seed: int) -> np.ndarray:
    """
    Draw n rows i.i.d. from N(x, I).

    Args:
        x: Center in model space.
        n: Number of rows, >= 1.
        seed: Generator seed.

    Returns:
        np.ndarray: (n, d) perturbations.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    x = np.asarray(x, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    return x + rng.standard_normal((n, len(x)))


def sample_perturbations_batch(X: np.ndarray, per_row: int, seed: int) -> np.ndarray:
    """`per_row` draws from N(x, I) for every row x, stacked row-major."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rng = np.random.default_rng(seed)
    centers = np.repeat(X, per_row, axis=0)
    return centers + rng.standard_normal(centers.shape)


def kernel_weights(x: np.ndarray, Z: np.ndarray, width: float) -> np.ndarray:
    """exp(-‖x - z‖² / width²) per row of Z."""
    if width <= 0:
        raise ValueError(f"width must be > 0, got {width}")
    sq = np.sum((np.atleast_2d(Z) - np.asarray(x, dtype=float)) ** 2, axis=1)
    return np.exp(-sq / width ** 2)


def fit_weighted_ridge(
    Z: np.ndarray, targets: np.ndarray, weights: np.ndarray, alpha: float
) -> tuple[float, np.ndarray]:
    """
    Weighted ridge regression through the normal equations.

    Minimizes Σ w_i (y_i - β₀ - βᵀz_i)² + alpha ‖β‖² with β₀ unpenalized.

    Returns:
        tuple[float, np.ndarray]: Intercept and coefficients.

    Raises:
        SingularSystem: alpha is 0 and the weighted design is rank deficient.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    targets = np.asarray(targets, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if not len(Z) == len(targets) == len(weights):
        raise DimensionMismatch(
            f"{len(Z)} rows, {len(targets)} targets, {len(weights)} weights"
        )
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    d = Z.shape[1]
    design = np.hstack([np.ones((len(Z), 1)), Z])
    weighted = design * weights[:, None]
    normal = design.T @ weighted
    normal[1:, 1:] += alpha * np.eye(d)
    rhs = weighted.T @ targets
    if alpha == 0 and np.linalg.matrix_rank(normal) < d + 1:
        raise SingularSystem("weighted design is rank deficient with alpha = 0")
    try:
        solution = np.linalg.solve(normal, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularSystem(f"normal equations: {e}") from e
    return float(solution[0]), solution[1:]


def rank_features(coefficients: np.ndarray) -> tuple[int, ...]:
    """Columns by descending |coefficient|; equal magnitudes by ascending index."""
    magnitude = np.round(np.abs(coefficients), _RANK_DECIMALS)
    order = np.lexsort((np.arange(len(coefficients)), -magnitude))
    return tuple(int(j) for j in order)


def explain_instance(
    model: Union[Predictor, PredictFn], x: np.ndarray, config: LimeConfig
) -> LimeExplanation:
    """
    Explain one prediction: sample, predict, weight, fit.

    Args:
        model: Object with `predict_proba` or a batch callable.
        x: Instance in model space.
        config: Explainer settings.

    Returns:
        LimeExplanation: Surrogate attributions.

    Raises:
        TooFewSamples: n_samples is below d + 2.
    """
    predict = as_predict_fn(model)
    x = np.asarray(x, dtype=float).reshape(-1)
    d = len(x)
    if config.n_samples < d + 2:
        raise TooFewSamples(
            f"lime.n_samples must be >= d + 2 = {d + 2}, got {config.n_samples}"
        )
    Z = sample_perturbations(x, config.n_samples, config.seed)
    targets = predict(Z)
    weights = kernel_weights(x, Z, config.width_for(d))
    intercept, coefficients = fit_weighted_ridge(
        Z, targets, weights, config.ridge_alpha
    )

    fitted = intercept + Z @ coefficients
    mean = np.average(targets, weights=weights)
    total = np.sum(weights * (targets - mean) ** 2)
    residual = np.sum(weights * (targets - fitted) ** 2)
    r2 = 1.0 - residual / total if total > 0 else 1.0
    return LimeExplanation(
        intercept=intercept,
        coefficients=coefficients,
        ranked_features=rank_features(coefficients),
        r2_local=float(r2),
    )


def explain_many(
    model: Union[Predictor, PredictFn],
    X: np.ndarray,
    config: LimeConfig,
    indices: Optional[Sequence[int]] = None,
) -> list[LimeExplanation]:
    """
    Explain several rows in parallel.

    Row i is explained with seed `derive_seed(config.seed, i)` where i is
    its entry in `indices` (default: its position in X), so results do not
    depend on scheduling.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    indices = list(range(len(X))) if indices is None else list(indices)

    def explain(i: int) -> LimeExplanation:
        row_config = replace(config, seed=derive_seed(config.seed, indices[i]))
        return explain_instance(model, X[i], row_config)

    with ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
        explanations = list(executor.map(explain, range(len(X))))
    logger.debug("Explained %d instances", len(explanations))
    return explanations


def topk_frequency(explanations: Sequence[LimeExplanation], k: int) -> np.ndarray:
    """
    Per column, the fraction of explanations ranking it among the top k.

    Raises:
        EmptyList: No explanations were given.
    """
    if not explanations:
        raise EmptyList("topk_frequency needs at least one explanation")
    d = len(explanations[0].coefficients)
    if not 1 <= k <= d:
        raise ValueError(f"k must be in 1..{d}, got {k}")
    counts = np.zeros(d)
    for explanation in explanations:
        counts[list(explanation.ranked_features[:k])] += 1
    return counts / len(explanations)


def _top_eigenpair(
    C: np.ndarray,
    found: list[np.ndarray],
    rng: np.random.Generator,
    scale: float,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, float]:
    def orthogonalize(v: np.ndarray) -> np.ndarray:
        for u in found:
            v = v - (u @ v) * u
        return v / np.linalg.norm(v)

    v = orthogonalize(rng.standard_normal(C.shape[0]))
    value = float(v @ C @ v)
    for _ in range(max_iter):
        w = C @ v
        if np.linalg.norm(w) <= 1e-12 * scale:
            return v, 0.0
        w = orthogonalize(w)
        new_value = float(w @ C @ w)
        step = np.linalg.norm(w - v)
        v = w
        if abs(new_value - value) <= tol * max(abs(new_value), 1e-300) and (
            step <= np.sqrt(tol) or abs(new_value) <= 1e-12 * scale
        ):
            return v, max(new_value, 0.0)
        value = new_value
    raise ConvergenceFailure(f"power iteration did not converge in {max_iter} steps")


def pca_project(
    real: np.ndarray,
    perturbations: np.ndarray,
    n_components: int = 2,
    tol: float = 1e-10,
    max_iter: int = 10000,
    seed: int = 0,
) -> PcaProjection:
    """
    Project real rows and perturbations onto the top principal components.

    Components are found by power iteration on the combined covariance with
    deflation and explicit orthogonalization against earlier components.

    Raises:
        ConvergenceFailure: An eigenpair did not settle within max_iter.
    """
    real = np.atleast_2d(np.asarray(real, dtype=float))
    perturbations = np.atleast_2d(np.asarray(perturbations, dtype=float))
    X = np.vstack([real, perturbations])
    if len(X) < n_components or X.shape[1] < n_components:
        raise ValueError("not enough rows or columns for the requested components")
    mean = X.mean(axis=0)
    centered = X - mean
    C = centered.T @ centered / len(X)
    total = float(np.trace(C))
    scale = max(total, 1e-300)

    rng = np.random.default_rng(seed)
    components, values = [], []
    deflated = C.copy()
    for _ in range(n_components):
        v, value = _top_eigenpair(deflated, components, rng, scale, tol, max_iter)
        components.append(v)
        values.append(value)
        deflated = deflated - value * np.outer(v, v)

    components = np.array(components)
    values = np.array(values)
    ratio = values / total if total > 0 else np.zeros_like(values)
    return PcaProjection(
        coordinates=centered @ components.T,
        source=np.concatenate([np.ones(len(real)), np.zeros(len(perturbations))]),
        components=components,
        explained_variance=values,
        explained_variance_ratio=ratio,
        mean=mean,
    )
