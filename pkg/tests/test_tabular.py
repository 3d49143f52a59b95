#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from mirage.errors import (
    MalformedRow, MissingColumn, NoSensitiveColumn, NonBinaryOutcome,
    ZeroVariance,
)
from mirage.synthetic import make_compas_like, write_dataset
from mirage.tabular import (
    ColumnMeta, Schema, SplitSpec, TabularDataset, augment_uncorrelated,
    feature_correlations, group_masks, invert, load_csv, load_schema,
    median_absolute_deviation, split, split_indices, standardize, summary,
)


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def dataset(features, labels, roles=None) -> TabularDataset:
    features = np.asarray(features, dtype=float)
    roles = roles or ["ordinary"] * features.shape[1]
    columns = tuple(ColumnMeta(f"c{j}", r) for j, r in enumerate(roles))
    return TabularDataset(features=features, labels=labels, columns=columns)


def test_load_minimal_csv(tmp_path):
    csv = write(tmp_path / "toy.csv", "a,b,y\n1,2,0\n3,4,1\n5,6,1\n")
    data = load_csv(csv, Schema(roles={"y": "outcome"}))
    assert data.n_rows == 3
    assert data.n_features == 2
    assert data.column_names == ["a", "b"]
    assert list(data.labels) == [0, 1, 1]


def test_missing_sensitive_column(tmp_path):
    csv = write(tmp_path / "toy.csv", "a,b,y\n1,2,0\n")
    schema = Schema(roles={"race": "sensitive", "y": "outcome"})
    with pytest.raises(MissingColumn):
        load_csv(csv, schema)


def test_malformed_row_reports_index(tmp_path):
    csv = write(tmp_path / "toy.csv", "a,b,y\n1,2,0\n3,x,1\n5,,1\n")
    with pytest.raises(MalformedRow) as info:
        load_csv(csv, Schema(roles={"y": "outcome"}))
    assert info.value.index == 1
    assert info.value.column == "b"


def test_non_binary_outcome(tmp_path):
    csv = write(tmp_path / "toy.csv", "a,y\n1,0\n2,2\n")
    with pytest.raises(NonBinaryOutcome):
        load_csv(csv, Schema(roles={"y": "outcome"}))


def test_schema_file(tmp_path):
    path = write(
        tmp_path / "toy.schema",
        "column.race = sensitive\ncolumn.y = outcome\nprotected.value = 1\n",
    )
    schema = load_schema(path)
    assert schema.roles == {"race": "sensitive", "y": "outcome"}
    assert schema.protected_value == 1.0
    assert schema.outcome == "y"


def test_compas_like_protected_mask_matches_file(tmp_path):
    frame, schema = make_compas_like(400, seed=3)
    csv, schema_path = write_dataset(frame, schema, tmp_path, "compas")
    data = load_csv(csv, load_schema(schema_path))
    masks = group_masks(data)

    lines = csv.read_text().splitlines()
    race = lines[0].split(",").index("race")
    expected = [i for i, row in enumerate(lines[1:]) if row.split(",")[race] == "1"]
    assert list(np.flatnonzero(masks.protected)) == expected

    recid = lines[0].split(",").index("two_year_recid")
    pr_pos = sum(
        1 for row in lines[1:]
        if row.split(",")[race] == "1" and row.split(",")[recid] == "1"
    )
    assert masks.sizes[0] == pr_pos


def test_standardize_two_point_column():
    data = dataset([[0.0], [2.0]], [0, 1])
    scaled = standardize(data, data)
    assert np.allclose(scaled.features[:, 0], [-1.0, 1.0], atol=1e-12)


def test_standardize_constant_column():
    data = dataset([[1.0, 0.0], [1.0, 2.0]], [0, 1])
    with pytest.raises(ZeroVariance) as info:
        standardize(data, data)
    assert info.value.column == "c0"


def test_standardize_round_trip_and_moments():
    rng = np.random.default_rng(0)
    raw = rng.normal(5.0, 3.0, size=(200, 4))
    data = dataset(raw, rng.integers(0, 2, 200))
    scaled = standardize(data, data)
    assert np.abs(scaled.features.mean(axis=0)).max() < 1e-9
    assert np.abs(scaled.features.std(axis=0) - 1.0).max() < 1e-9
    assert np.abs(invert(scaled) - raw).max() < 1e-12


def test_split_sizes_and_determinism():
    spec = SplitSpec(train_fraction=0.8, seed=7)
    train, test = split_indices(10, spec)
    assert len(train) == 8 and len(test) == 2
    assert sorted(np.concatenate([train, test])) == list(range(10))
    again, _ = split_indices(10, spec)
    assert list(train) == list(again)


def test_split_seeds_differ():
    a, _ = split_indices(1000, SplitSpec(0.8, seed=1))
    b, _ = split_indices(1000, SplitSpec(0.8, seed=2))
    assert list(a) != list(b)


def test_split_datasets_are_disjoint():
    data = dataset(np.arange(20.0).reshape(10, 2), [0, 1] * 5)
    train, test = split(data, SplitSpec(0.7, seed=0))
    rows = {tuple(r) for r in train.features} | {tuple(r) for r in test.features}
    assert train.n_rows + test.n_rows == 10
    assert len(rows) == 10


def test_split_fraction_out_of_range():
    with pytest.raises(ValueError):
        SplitSpec(train_fraction=1.0)


def test_augment_uncorrelated():
    rng = np.random.default_rng(0)
    sensitive = rng.integers(0, 2, 10000).astype(float)
    data = dataset(
        np.column_stack([rng.normal(size=10000), sensitive]),
        rng.integers(0, 2, 10000),
        roles=["ordinary", "sensitive"],
    )
    one = augment_uncorrelated(data, 1, seed=5)
    assert one.n_features == 3
    assert one.columns[2].role == "uncorrelated"
    assert abs(feature_correlations(one, 1)[2]) < 0.05

    two = augment_uncorrelated(data, 2, seed=5)
    assert abs(feature_correlations(two, 2)[3]) < 0.05
    assert set(np.unique(two.features[:, 2:])) <= {0.0, 1.0}

    again = augment_uncorrelated(data, 2, seed=5)
    assert np.array_equal(two.features, again.features)

    with pytest.raises(ValueError):
        augment_uncorrelated(data, 3, seed=5)


def test_group_masks_hand_counted():
    data = dataset(
        [[1.0, 0.3], [1.0, 0.1], [0.0, 0.2]], [1, 1, 0],
        roles=["sensitive", "ordinary"],
    )
    assert group_masks(data).sizes == (2, 0, 0, 1)


def test_group_masks_all_protected():
    data = dataset([[1.0], [1.0], [1.0]], [0, 1, 0], roles=["sensitive"])
    masks = group_masks(data)
    assert len(masks.np_pos) == 0 and len(masks.np_neg) == 0


def test_group_masks_after_standardize():
    data = dataset(
        [[1.0, 2.0], [0.0, 5.0], [1.0, 1.0], [0.0, 0.0]], [1, 0, 0, 1],
        roles=["sensitive", "ordinary"],
    )
    masks = group_masks(standardize(data, data))
    assert list(np.flatnonzero(masks.protected)) == [0, 2]


def test_group_masks_partition_random():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(1, 50))
        data = dataset(
            rng.integers(0, 2, size=(n, 2)).astype(float),
            rng.integers(0, 2, n),
            roles=["sensitive", "ordinary"],
        )
        masks = group_masks(data)
        joined = np.concatenate(
            [masks.pr_pos, masks.pr_neg, masks.np_pos, masks.np_neg]
        )
        assert sorted(joined) == list(range(n))
        assert set(masks.pr_pos) | set(masks.pr_neg) == set(
            np.flatnonzero(masks.protected)
        )


def test_no_sensitive_column():
    with pytest.raises(NoSensitiveColumn):
        group_masks(dataset([[0.0], [1.0]], [0, 1]))


def test_mad_falls_back_to_std():
    data = dataset([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0], [4.0, 3.0]], [0, 1, 0, 1])
    mad = median_absolute_deviation(data)
    assert mad[0] == pytest.approx(np.std([0.0, 0.0, 0.0, 4.0]))
    assert mad[1] == pytest.approx(1.0)


def test_summary_counts():
    data = dataset(
        [[1.0, 0.3], [1.0, 0.1], [0.0, 0.2]], [1, 1, 0],
        roles=["sensitive", "ordinary"],
    )
    info = summary(data)
    assert info["n_rows"] == 3 and info["n_features"] == 2
    assert info["groups"]["protected_positive"] == 2
    assert info["columns"][-1] == {"name": "y", "role": "outcome"}


if __name__ == "__main__":
    test_standardize_two_point_column()
    test_standardize_round_trip_and_moments()
    test_split_sizes_and_determinism()
    test_group_masks_hand_counted()
    print("ok")
