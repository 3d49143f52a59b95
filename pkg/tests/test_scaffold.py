#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from mirage.errors import DimensionMismatch
from mirage.forest import discriminator_accuracy, forest_predict
from mirage.lime import sample_perturbations_batch
from mirage.rules import one_feature_rule
from mirage.scaffold import (
    DISCRIMINATOR_PARAMS, ScaffoldClassifier, build_scaffold, scaffold_predict,
)
from mirage.synthetic import make_compas_like
from mirage.tabular import (
    SplitSpec, TabularDataset, ColumnMeta, augment_uncorrelated, split,
    standardize,
)


def compas(n_rows: int, seed: int):
    frame, schema = make_compas_like(n_rows, seed)
    names = [c for c in frame.columns if c != schema.outcome]
    columns = tuple(ColumnMeta(n, schema.roles.get(n, "ordinary")) for n in names)
    data = TabularDataset(frame[names].to_numpy(float),
                          frame[schema.outcome].to_numpy(), columns)
    data = augment_uncorrelated(data, 1, seed=seed)
    train, test = split(data, SplitSpec(0.5, seed=seed))
    return standardize(train, train), standardize(test, train)


@pytest.fixture(scope="module")
def trained():
    train, test = compas(4000, seed=0)
    biased = one_feature_rule(train, "race")
    unbiased = one_feature_rule(train, "uncorrelated_1")
    scaffold = build_scaffold(
        train.features, biased, unbiased,
        replace(DISCRIMINATOR_PARAMS, n_trees=50, seed=1), seed=2,
    )
    return train, test, biased, unbiased, scaffold


def test_training_row_goes_to_biased(trained):
    train, _, biased, _, scaffold = trained
    x = train.features[0]
    assert scaffold_predict(scaffold, x) == biased.predict_proba(x[None, :])[0]


def test_far_perturbation_goes_to_unbiased(trained):
    train, _, _, unbiased, scaffold = trained
    x = train.features[0] + 25.0
    assert forest_predict(scaffold.discriminator, x) < scaffold.threshold
    assert scaffold_predict(scaffold, x) == unbiased.predict_proba(x[None, :])[0]


def test_threshold_zero_always_biased(trained):
    train, _, biased, _, scaffold = trained
    always = ScaffoldClassifier(biased, scaffold.unbiased, scaffold.discriminator, 0.0)
    X = train.features[:50] + 30.0
    assert np.array_equal(always.predict_proba(X), biased.predict_proba(X))


def test_fidelity_on_held_out_rows(trained):
    train, test, biased, _, scaffold = trained
    fake = sample_perturbations_batch(test.features, 1, seed=9)
    assert discriminator_accuracy(scaffold.discriminator, test.features, fake) >= 0.9
    agreement = np.mean(
        scaffold.predict_proba(test.features) == biased.predict_proba(test.features)
    )
    assert agreement >= 0.99


def test_dimension_mismatch(trained):
    _, _, _, _, scaffold = trained
    with pytest.raises(DimensionMismatch):
        scaffold_predict(scaffold, np.zeros(3))


if __name__ == "__main__":
    print("run with pytest")
