#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from mirage.errors import EmptyList, SingularSystem
from mirage.lime import (
    LimeConfig, LimeExplanation, explain_instance, explain_many,
    fit_weighted_ridge, kernel_weights, pca_project, sample_perturbations,
    topk_frequency,
)
from mirage.rules import one_feature_rule
from mirage.synthetic import make_compas_like
from mirage.tabular import ColumnMeta, TabularDataset, standardize


def explanation(ranked) -> LimeExplanation:
    d = len(ranked)
    return LimeExplanation(0.0, np.zeros(d), tuple(ranked), 1.0)


def test_sampler_moments():
    x = np.array([1.5, -0.5])
    Z = sample_perturbations(x, 100000, seed=0)
    assert Z.shape == (100000, 2)
    assert np.all(np.abs(Z.mean(axis=0) - x) < 3 / np.sqrt(100000))
    assert np.all(np.abs(Z.var(axis=0) - 1.0) < 0.05)


def test_sampler_deterministic():
    x = np.zeros(4)
    assert np.array_equal(
        sample_perturbations(x, 1, seed=3), sample_perturbations(x, 1, seed=3)
    )


def test_kernel_values():
    x = np.array([0.0, 0.0])
    Z = np.array([[0.0, 0.0], [3.0, 4.0]])
    w = kernel_weights(x, Z, width=5.0)
    assert w[0] == 1.0
    assert w[1] == pytest.approx(np.exp(-1.0))


def test_kernel_monotone():
    x = np.zeros(2)
    Z = np.column_stack([np.linspace(0, 5, 50), np.zeros(50)])
    w = kernel_weights(x, Z, width=1.3)
    assert np.all(np.diff(w) < 0)
    assert np.all((w > 0) & (w <= 1))


def test_ridge_recovers_exact_linear():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(50, 3))
    beta = np.array([1.5, -2.0, 0.25])
    intercept, coefficients = fit_weighted_ridge(Z, 0.7 + Z @ beta, np.ones(50), 0.0)
    assert intercept == pytest.approx(0.7, abs=1e-8)
    assert np.allclose(coefficients, beta, atol=1e-8)


def test_ridge_large_alpha_limit():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(40, 2))
    y = rng.normal(size=40)
    w = rng.uniform(0.1, 1.0, 40)
    intercept, coefficients = fit_weighted_ridge(Z, y, w, 1e12)
    assert np.all(np.abs(coefficients) < 1e-8)
    assert intercept == pytest.approx(np.average(y, weights=w), abs=1e-6)


def test_ridge_matches_normal_equation_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        Z = rng.normal(size=(20, 3))
        y = rng.normal(size=20)
        w = rng.uniform(0.0, 1.0, 20)
        alpha = rng.uniform(0.0, 2.0)
        A = np.zeros((4, 4))
        b = np.zeros(4)
        for i in range(20):
            row = np.concatenate([[1.0], Z[i]])
            A += w[i] * np.outer(row, row)
            b += w[i] * y[i] * row
        A[1:, 1:] += alpha * np.eye(3)
        expected = np.linalg.solve(A, b)
        intercept, coefficients = fit_weighted_ridge(Z, y, w, alpha)
        assert np.allclose(np.concatenate([[intercept], coefficients]), expected,
                           atol=1e-8)


def test_ridge_singular():
    Z = np.column_stack([np.arange(5.0), np.arange(5.0)])
    with pytest.raises(SingularSystem):
        fit_weighted_ridge(Z, np.arange(5.0), np.ones(5), 0.0)


def test_explain_linear_model_ranking():
    w = np.array([3.0, -1.0, 2.0])
    model = lambda Z: 0.5 + 0.01 * Z @ w
    result = explain_instance(model, np.zeros(3), LimeConfig(n_samples=2000))
    assert result.ranked_features == (0, 2, 1)
    assert np.allclose(result.coefficients / 0.01, w, rtol=1e-2)
    assert result.r2_local == pytest.approx(1.0, abs=1e-3)


def test_explain_constant_model():
    model = lambda Z: np.full(len(Z), 0.3)
    result = explain_instance(model, np.ones(4), LimeConfig(n_samples=500))
    assert np.all(np.abs(result.coefficients) < 1e-6)
    assert result.ranked_features == (0, 1, 2, 3)


def test_explain_deterministic():
    model = lambda Z: 1.0 / (1.0 + np.exp(-Z[:, 0] * Z[:, 1]))
    config = LimeConfig(n_samples=300, seed=5)
    a = explain_instance(model, np.array([0.2, 0.4]), config)
    b = explain_instance(model, np.array([0.2, 0.4]), config)
    assert np.array_equal(a.coefficients, b.coefficients)


def test_ranking_invariant_to_weight_scale():
    rng = np.random.default_rng(3)
    Z = rng.normal(size=(100, 4))
    y = np.tanh(Z @ np.array([0.4, -1.0, 0.1, 0.7]))
    w = rng.uniform(0.1, 1.0, 100)
    _, a = fit_weighted_ridge(Z, y, w, 0.0)
    _, b = fit_weighted_ridge(Z, y, 7.5 * w, 0.0)
    assert np.array_equal(np.argsort(-np.abs(a)), np.argsort(-np.abs(b)))


def test_biased_rule_puts_sensitive_first():
    frame, schema = make_compas_like(500, seed=1)
    names = [c for c in frame.columns if c != schema.outcome]
    columns = tuple(ColumnMeta(n, schema.roles.get(n, "ordinary")) for n in names)
    data = TabularDataset(frame[names].to_numpy(float),
                          frame[schema.outcome].to_numpy(), columns)
    data = standardize(data, data)
    biased = one_feature_rule(data, "race")
    race = data.column_index("race")
    explanations = explain_many(biased, data.features[:20], LimeConfig(n_samples=1000))
    assert topk_frequency(explanations, 1)[race] == 1.0


def test_explain_many_matches_indices():
    model = lambda Z: 1.0 / (1.0 + np.exp(-Z.sum(axis=1)))
    X = np.random.default_rng(4).normal(size=(5, 3))
    config = LimeConfig(n_samples=200)
    all_rows = explain_many(model, X, config)
    last = explain_many(model, X[4:], config, indices=[4])
    assert np.array_equal(all_rows[4].coefficients, last[0].coefficients)


def test_topk_frequency():
    assert list(topk_frequency([explanation((2, 0, 1))], 3)) == [1.0, 1.0, 1.0]
    two = [explanation((0, 1)), explanation((1, 0))]
    assert list(topk_frequency(two, 1)) == [0.5, 0.5]
    with pytest.raises(EmptyList):
        topk_frequency([], 1)


def test_pca_line():
    t = np.linspace(-3, 3, 40)
    direction = np.array([1.0, 2.0, -2.0]) / 3.0
    points = np.outer(t, direction) + np.array([5.0, 1.0, 0.0])
    result = pca_project(points[:20], points[20:])
    assert abs(result.components[0] @ direction) > 1 - 1e-6
    assert result.explained_variance_ratio[1] < 1e-8
    assert result.coordinates.shape == (40, 2)


def test_pca_isotropic():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(6000, 3))
    result = pca_project(X[:3000], X[3000:], n_components=3)
    assert np.all(np.abs(result.explained_variance_ratio - 1 / 3) < 0.1 / 3)
    gram = result.components @ result.components.T
    assert np.allclose(gram, np.eye(3), atol=1e-8)


def test_pca_perturbations_spread_wider():
    frame, schema = make_compas_like(1000, seed=2)
    names = [c for c in frame.columns if c != schema.outcome]
    columns = tuple(ColumnMeta(n) for n in names)
    data = TabularDataset(frame[names].to_numpy(float),
                          frame[schema.outcome].to_numpy(), columns)
    real = standardize(data, data).features
    rng = np.random.default_rng(0)
    fake = real + rng.standard_normal(real.shape)
    result = pca_project(real, fake)
    spread = (result.coordinates ** 2).sum(axis=1)
    assert spread[1000:].mean() > 1.4 * spread[:1000].mean()
    assert "perturbation" in result.to_text()


def test_pca_text_has_one_column_per_component():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 3))
    one = pca_project(X[:10], X[10:], n_components=1).to_text().splitlines()
    assert one[0] == "x source"
    assert len(one) == 21
    assert one[1].split()[1] == "real"
    assert one[-1].split()[1] == "perturbation"
    two = pca_project(X[:10], X[10:]).to_text().splitlines()
    assert two[0] == "x y source"
    assert len(two[1].split()) == 3
    float(two[1].split()[0])


if __name__ == "__main__":
    test_ridge_matches_normal_equation_oracle()
    test_explain_linear_model_ranking()
    test_pca_line()
    print("ok")
