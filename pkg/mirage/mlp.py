# -*- coding: utf-8 -*-
"""
Feedforward scoring model with hand-written backpropagation.

The parameter vector θ is stored flat, layer by layer, each layer as its
(in, out) weight matrix in row-major order followed by its bias vector.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError, DimensionMismatch, NonFiniteLoss

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu")
FORMAT = "mirage.mlp"
VERSION = 1


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    ez = np.exp(z[~positive])
    out[~positive] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return (z > 0).astype(float)


@dataclass(frozen=True)
class MlpModel:
    """
    Multilayer perceptron with a single sigmoid output.

    Attributes:
        layer_sizes: Units per layer, input first, output (1) last.
        params: Flat parameter vector θ.
        activation: Hidden activation, tanh or relu.
    """
    layer_sizes: tuple[int, ...]
    params: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        if sizes[-1] != 1:
            raise ValueError("output layer must have exactly one unit")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        params = np.array(self.params, dtype=float).reshape(-1)
        if len(params) != self.n_params(sizes):
            raise DimensionMismatch(
                f"{len(params)} parameters for layer sizes {sizes}, "
                f"expected {self.n_params(sizes)}"
            )
        params.setflags(write=False)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "params", params)

    @staticmethod
    def n_params(layer_sizes) -> int:
        return sum(
            (fan_in + 1) * fan_out
            for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:])
        )

    @classmethod
    def initialize(
        cls, layer_sizes, activation: str = "tanh", seed: int = 0
    ) -> "MlpModel":
        """Glorot-uniform weights and zero biases."""
        rng = np.random.default_rng(seed)
        chunks = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-limit, limit, fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return cls(tuple(layer_sizes), np.concatenate(chunks), activation)

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    def with_params(self, params: np.ndarray) -> "MlpModel":
        return MlpModel(self.layer_sizes, params, self.activation)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views per layer, W shaped (in, out)."""
        out, offset = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = self.params[offset:offset + fan_in * fan_out]
            offset += fan_in * fan_out
            b = self.params[offset:offset + fan_out]
            offset += fan_out
            out.append((W.reshape(fan_in, fan_out), b))
        return out

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_size:
            raise DimensionMismatch(
                f"input has {X.shape[1]} columns, model expects {self.input_size}"
            )
        return X

    def logits(self, X: np.ndarray) -> np.ndarray:
        return _forward(self, self._check(X))[1][-1][:, 0]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpModel":
        if not isinstance(data, dict) or data.get("format") != FORMAT:
            raise DataError("not a serialized MLP model")
        if data.get("version") != VERSION:
            raise DataError(f"unsupported model version {data.get('version')}")
        try:
            return cls(
                tuple(data["layer_sizes"]),
                np.asarray(data["params"], dtype=float),
                data.get("activation", "tanh"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed model file: {e}") from e


def _forward(
    model: MlpModel, X: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Activations (input first) and pre-activations per layer."""
    activations, pre = [X], []
    layers = model.layers()
    for i, (W, b) in enumerate(layers):
        z = activations[-1] @ W + b
        pre.append(z)
        if i < len(layers) - 1:
            activations.append(_activate(z, model.activation))
    return activations, pre


def _backprop(
    model: MlpModel,
    activations: list[np.ndarray],
    pre: list[np.ndarray],
    d_out: np.ndarray,
    wrt_input: bool = False,
) -> np.ndarray:
    """
    Propagate d(objective)/d(output logit) per row back through the net.

    Returns the summed parameter gradient, or the per-row input gradient
    when `wrt_input` is set.
    """
    layers = model.layers()
    delta = d_out.reshape(-1, 1)
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if not wrt_input:
            grads.append((activations[i].T @ delta, delta.sum(axis=0)))
        if i == 0:
            break
        delta = (delta @ W.T) * _activate_grad(pre[i - 1], model.activation)
    if wrt_input:
        return delta @ layers[0][0].T
    flat = []
    for gW, gb in reversed(grads):
        flat.append(gW.reshape(-1))
        flat.append(gb)
    return np.concatenate(flat)


def mlp_forward(model: MlpModel, x: np.ndarray) -> float:
    """Positive-class probability of one instance."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != model.input_size:
        raise DimensionMismatch(
            f"instance of shape {x.shape}, model expects ({model.input_size},)"
        )
    return float(model.predict_proba(x[None, :])[0])


def mlp_loss(model: MlpModel, X: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, evaluated on logits."""
    z = model.logits(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != len(z):
        raise DimensionMismatch(f"{len(y)} labels for {len(z)} rows")
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def mlp_grad_params(model: MlpModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Gradient of the mean cross-entropy with respect to θ.

    Args:
        model: Model to differentiate.
        X: (n, d) batch, n >= 1.
        y: Length-n 0/1 labels.

    Returns:
        np.ndarray: Vector of the same length as `model.params`.
    """
    X = model._check(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(X) == 0:
        raise DimensionMismatch("empty batch")
    if len(y) != len(X):
        raise DimensionMismatch(f"{len(y)} labels for {len(X)} rows")
    activations, pre = _forward(model, X)
    p = _sigmoid(pre[-1][:, 0])
    return _backprop(model, activations, pre, (p - y) / len(X))


def mlp_grad_params_output(
    model: MlpModel, X: np.ndarray, weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """Gradient of Σ_i weights_i · f(x_i) with respect to θ."""
    X = model._check(X)
    weights = np.ones(len(X)) if weights is None else np.asarray(weights, float)
    activations, pre = _forward(model, X)
    p = _sigmoid(pre[-1][:, 0])
    return _backprop(model, activations, pre, weights * p * (1.0 - p))


def mlp_grad_input_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Row-wise ∇_x f for an (n, d) batch; returns (n, d)."""
    X = model._check(X)
    activations, pre = _forward(model, X)
    p = _sigmoid(pre[-1][:, 0])
    return _backprop(model, activations, pre, p * (1.0 - p), wrt_input=True)


def mlp_grad_input(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """∇_x f(x) for one instance."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != model.input_size:
        raise DimensionMismatch(
            f"instance of shape {x.shape}, model expects ({model.input_size},)"
        )
    return mlp_grad_input_batch(model, x[None, :])[0]


def mlp_hvp_input(model: MlpModel, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    (∇²_x f(x)) v by central differences of the analytic input gradient.

    Step ε = 1e-4 · max(1, ‖x‖).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != x.shape:
        raise DimensionMismatch(f"direction {v.shape} vs instance {x.shape}")
    if not np.any(v):
        return np.zeros_like(x)
    eps = 1e-4 * max(1.0, float(np.linalg.norm(x)))
    return (
        mlp_grad_input(model, x + eps * v) - mlp_grad_input(model, x - eps * v)
    ) / (2.0 * eps)


def fit_mlp(
    model: MlpModel,
    X: np.ndarray,
    y: np.ndarray,
    steps: int,
    learning_rate: float,
) -> MlpModel:
    """
    Full-batch gradient descent on the mean cross-entropy.

    Raises:
        NonFiniteLoss: The loss became NaN or infinite.
    """
    params = np.array(model.params)
    current = model
    for step in range(steps):
        params = params - learning_rate * mlp_grad_params(current, X, y)
        current = model.with_params(params)
        if not np.all(np.isfinite(params)):
            raise NonFiniteLoss(f"parameters diverged at step {step}")
    loss = mlp_loss(current, X, y)
    if not np.isfinite(loss):
        raise NonFiniteLoss("cross-entropy is not finite after training")
    logger.debug("fit_mlp: %d steps, loss %.6f", steps, loss)
    return current
