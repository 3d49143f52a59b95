#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from mirage.errors import DataError, DimensionMismatch
from mirage.mlp import (
    MlpModel, fit_mlp, mlp_forward, mlp_grad_input, mlp_grad_params,
    mlp_grad_params_output, mlp_hvp_input, mlp_loss,
)


def close(got: np.ndarray, expected: np.ndarray, rel: float) -> None:
    err = np.linalg.norm(got - expected)
    assert err <= rel * np.linalg.norm(expected) + 1e-9, (got, expected)


def oracle_forward(model: MlpModel, x: np.ndarray) -> float:
    h = x
    offset = 0
    sizes = model.layer_sizes
    for i in range(len(sizes) - 1):
        n_w = sizes[i] * sizes[i + 1]
        W = model.params[offset:offset + n_w].reshape(sizes[i], sizes[i + 1])
        b = model.params[offset + n_w:offset + n_w + sizes[i + 1]]
        offset += n_w + sizes[i + 1]
        h = h @ W + b
        if i < len(sizes) - 2:
            h = np.tanh(h)
    return float(1.0 / (1.0 + np.exp(-h[0])))


def random_net(rng, d=3, hidden=4, activation="tanh") -> MlpModel:
    sizes = (d, hidden, hidden, 1)
    return MlpModel(sizes, rng.normal(0, 0.8, MlpModel.n_params(sizes)), activation)


def test_zero_weights_give_half():
    model = MlpModel((3, 1), np.zeros(4))
    assert mlp_forward(model, np.array([1.0, -2.0, 3.0])) == 0.5


def test_single_linear_layer():
    model = MlpModel((1, 1), np.array([2.0, 0.0]))
    assert mlp_forward(model, np.array([1.0])) == pytest.approx(0.8807970779778823)


def test_forward_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        model = random_net(rng)
        x = rng.normal(size=3)
        assert abs(mlp_forward(model, x) - oracle_forward(model, x)) < 1e-12


def test_parameter_count():
    model = MlpModel.initialize((5, 32, 32, 1), seed=1)
    assert len(model.params) == 6 * 32 + 33 * 32 + 33 * 1


def test_dimension_mismatch():
    model = MlpModel.initialize((3, 2, 1), seed=0)
    with pytest.raises(DimensionMismatch):
        mlp_forward(model, np.zeros(4))
    with pytest.raises(DimensionMismatch):
        mlp_hvp_input(model, np.zeros(3), np.zeros(2))


def test_grad_params_saturated_optimum():
    model = MlpModel((1, 1), np.array([50.0, 0.0]))
    X = np.array([[1.0], [-1.0]])
    grad = mlp_grad_params(model, X, np.array([1, 0]))
    assert np.linalg.norm(grad) < 1e-6


def test_grad_params_finite_differences():
    rng = np.random.default_rng(1)
    for case in range(100):
        model = random_net(rng, activation="tanh")
        X = rng.normal(size=(5, 3))
        y = rng.integers(0, 2, 5)
        grad = mlp_grad_params(model, X, y)
        fd = np.zeros_like(grad)
        for i in range(len(grad)):
            bump = np.zeros_like(grad)
            bump[i] = 1e-5
            fd[i] = (
                mlp_loss(model.with_params(model.params + bump), X, y)
                - mlp_loss(model.with_params(model.params - bump), X, y)
            ) / 2e-5
        close(grad, fd, 1e-4)


def test_grad_params_duplicated_rows():
    rng = np.random.default_rng(2)
    model = random_net(rng)
    X = rng.normal(size=(4, 3))
    y = np.array([0, 1, 1, 0])
    once = mlp_grad_params(model, X, y)
    twice = mlp_grad_params(model, np.vstack([X, X]), np.concatenate([y, y]))
    assert np.allclose(once, twice, atol=1e-14)


def test_grad_params_output_finite_differences():
    rng = np.random.default_rng(3)
    model = random_net(rng)
    X = rng.normal(size=(3, 3))
    w = rng.normal(size=3)
    grad = mlp_grad_params_output(model, X, w)
    fd = np.zeros_like(grad)
    for i in range(len(grad)):
        bump = np.zeros_like(grad)
        bump[i] = 1e-5
        up = model.with_params(model.params + bump).predict_proba(X)
        down = model.with_params(model.params - bump).predict_proba(X)
        fd[i] = w @ (up - down) / 2e-5
    close(grad, fd, 1e-4)


def test_grad_input_linear_closed_form():
    w = np.array([0.5, -1.5])
    model = MlpModel((2, 1), np.array([0.5, -1.5, 0.2]))
    x = np.array([0.3, 0.7])
    s = 1.0 / (1.0 + np.exp(-(w @ x + 0.2)))
    assert np.allclose(mlp_grad_input(model, x), s * (1 - s) * w, atol=1e-14)


def test_grad_input_finite_differences():
    rng = np.random.default_rng(4)
    for case in range(100):
        model = random_net(rng)
        x = rng.normal(size=3)
        grad = mlp_grad_input(model, x)
        fd = np.array([
            (mlp_forward(model, x + e) - mlp_forward(model, x - e)) / 2e-5
            for e in np.eye(3) * 1e-5
        ])
        close(grad, fd, 1e-4)


def test_grad_input_constant_output():
    rng = np.random.default_rng(5)
    model = random_net(rng)
    params = np.array(model.params)
    params[-5:-1] = 0.0
    model = model.with_params(params)
    assert np.all(mlp_grad_input(model, rng.normal(size=3)) == 0.0)


def test_hvp_linear_one_dimensional():
    w, b, x = 1.7, -0.3, 0.4
    model = MlpModel((1, 1), np.array([w, b]))
    s = 1.0 / (1.0 + np.exp(-(w * x + b)))
    analytic = w * w * s * (1 - s) * (1 - 2 * s)
    got = mlp_hvp_input(model, np.array([x]), np.array([1.0]))[0]
    assert got == pytest.approx(analytic, rel=1e-3)


def test_hvp_zero_direction():
    model = MlpModel.initialize((3, 4, 1), seed=0)
    assert np.all(mlp_hvp_input(model, np.ones(3), np.zeros(3)) == 0.0)


def test_hvp_symmetry():
    rng = np.random.default_rng(6)
    for _ in range(20):
        model = random_net(rng)
        x, u, v = rng.normal(size=(3, 3))
        left = v @ mlp_hvp_input(model, x, u)
        right = u @ mlp_hvp_input(model, x, v)
        assert left == pytest.approx(right, rel=1e-3, abs=1e-9)


def test_fit_reduces_loss():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(200, 2))
    y = (X[:, 0] > 0).astype(int)
    model = MlpModel.initialize((2, 8, 1), seed=3)
    trained = fit_mlp(model, X, y, steps=300, learning_rate=0.5)
    assert mlp_loss(trained, X, y) < mlp_loss(model, X, y)
    assert np.mean(trained.predict(X) == y) > 0.9


def test_serialization_bit_exact():
    model = MlpModel.initialize((4, 5, 1), activation="relu", seed=9)
    text = json.dumps(model.to_dict())
    again = MlpModel.from_dict(json.loads(text))
    assert again.layer_sizes == model.layer_sizes
    assert again.activation == "relu"
    assert np.array_equal(again.params, model.params)


def test_from_dict_rejects_foreign_data():
    with pytest.raises(DataError):
        MlpModel.from_dict({"format": "something-else"})


if __name__ == "__main__":
    test_zero_weights_give_half()
    test_forward_matches_oracle()
    test_grad_params_finite_differences()
    test_grad_input_finite_differences()
    test_hvp_symmetry()
    print("ok")
