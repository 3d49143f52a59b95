# -*- coding: utf-8 -*-
"""
Dataset ingestion, standardization, splitting and group bookkeeping.

Every model-facing array lives in "model space": the standardized
coordinates `(x - mean) / std` computed on a training split. A freshly
loaded dataset carries the identity statistics (mean 0, std 1), so
model space and original units coincide until `standardize` is applied.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from .errors import (
    ConfigError, DataError, MalformedRow, MissingColumn, NoSensitiveColumn,
    NonBinaryOutcome, ZeroVariance,
)

logger = logging.getLogger(__name__)

ORDINARY = "ordinary"
SENSITIVE = "sensitive"
UNCORRELATED = "uncorrelated"
OUTCOME = "outcome"
ROLES = (ORDINARY, SENSITIVE, UNCORRELATED, OUTCOME)

# Relative floor below which a column counts as constant.
_ZERO_STD = 1e-12
# Tolerance for "equal to the protected value" after a standardize round trip.
_PROTECTED_ATOL = 1e-9


@dataclass(frozen=True)
class ColumnMeta:
    """Name and role tag of one column."""
    name: str
    role: str = ORDINARY


@dataclass(frozen=True)
class Schema:
    """
    Column-role map read from a schema file.

    Attributes:
        roles: Column name -> role tag. Unlisted CSV columns are ordinary.
        protected_value: Value of the sensitive column marking the
            protected group.
    """
    roles: dict[str, str]
    protected_value: float = 1.0

    def __post_init__(self):
        for name, role in self.roles.items():
            if role not in ROLES:
                raise ConfigError(f"column '{name}': unknown role '{role}'")
        outcomes = [n for n, r in self.roles.items() if r == OUTCOME]
        if len(outcomes) != 1:
            raise ConfigError(
                f"schema needs exactly one outcome column, got {outcomes}"
            )

    @property
    def outcome(self) -> str:
        return next(n for n, r in self.roles.items() if r == OUTCOME)

    def to_text(self) -> str:
        """Render the schema in the flat key-value file format."""
        lines = [f"column.{name} = {role}" for name, role in self.roles.items()]
        lines.append(f"protected.value = {self.protected_value:g}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split parameters."""
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned int: {self.seed}")


@dataclass(frozen=True)
class GroupMasks:
    """Protected mask and the four outcome-by-group index sets."""
    protected: np.ndarray
    pr_pos: np.ndarray
    pr_neg: np.ndarray
    np_pos: np.ndarray
    np_neg: np.ndarray

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        """Sizes of (pr_pos, pr_neg, np_pos, np_neg)."""
        return (
            len(self.pr_pos), len(self.pr_neg),
            len(self.np_pos), len(self.np_neg),
        )


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TabularDataset:
    """
    Feature matrix in model space with labels and column metadata.

    Attributes:
        features: (N, d) matrix in model space.
        labels: Length-N vector of 0/1 outcomes.
        columns: Metadata of the d feature columns.
        outcome: Name of the outcome column.
        means: Per-column means of the statistics split (original units).
        stds: Per-column standard deviations (original units).
        protected_value: Sensitive-column value marking the protected group.
    """
    features: np.ndarray
    labels: np.ndarray
    columns: tuple[ColumnMeta, ...]
    outcome: str = "y"
    means: Optional[np.ndarray] = None
    stds: Optional[np.ndarray] = None
    protected_value: float = 1.0
    source: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels).reshape(-1)
        n, d = features.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset needs N >= 1 and d >= 1, got {n}x{d}")
        if len(labels) != n:
            raise DataError(f"{len(labels)} labels for {n} rows")
        if not np.isin(labels, (0, 1)).all():
            raise NonBinaryOutcome(f"labels of '{self.outcome}' are not 0/1")
        if len(self.columns) != d:
            raise DataError(f"{len(self.columns)} column names for {d} columns")
        means = np.zeros(d) if self.means is None else self.means
        stds = np.ones(d) if self.stds is None else self.stds
        if np.shape(means) != (d,) or np.shape(stds) != (d,):
            raise DataError("means/stds must have one entry per column")
        if not (np.asarray(stds) > 0).all():
            raise DataError("stds must be strictly positive")
        object.__setattr__(self, "features", _frozen(features, float))
        object.__setattr__(self, "labels", _frozen(labels, np.int64))
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "means", _frozen(means, float))
        object.__setattr__(self, "stds", _frozen(stds, float))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def column_meta(self) -> tuple[ColumnMeta, ...]:
        """Feature columns followed by the outcome column."""
        return self.columns + (ColumnMeta(self.outcome, OUTCOME),)

    def column_index(self, name: str) -> int:
        for j, column in enumerate(self.columns):
            if column.name == name:
                return j
        raise MissingColumn(f"no feature column '{name}'")

    def columns_with_role(self, role: str) -> list[int]:
        return [j for j, c in enumerate(self.columns) if c.role == role]

    @property
    def sensitive_index(self) -> Optional[int]:
        found = self.columns_with_role(SENSITIVE)
        return found[0] if found else None

    def original_features(self) -> np.ndarray:
        """Features mapped back to original units."""
        return self.features * self.stds + self.means

    def to_model_space(self, rows: np.ndarray) -> np.ndarray:
        """Map original-unit rows into this dataset's model space."""
        return (np.asarray(rows, dtype=float) - self.means) / self.stds

    def take(self, indices: Sequence[int]) -> "TabularDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self, features=self.features[idx], labels=self.labels[idx]
        )


def load_schema(path: Path) -> Schema:
    """
    Load a schema file.

    Lines look like `column.race = sensitive`, `column.y = outcome` and
    `protected.value = 1`.

    Args:
        path: Path to the schema file.

    Returns:
        Schema: Parsed schema.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"schema file not found: {path}")
    roles: dict[str, str] = {}
    protected_value = 1.0
    for key, value in dotenv_values(path).items():
        value = (value or "").strip()
        if key.startswith("column."):
            roles[key[len("column."):]] = value.lower()
        elif key == "protected.value":
            try:
                protected_value = float(value)
            except ValueError as e:
                raise ConfigError(f"protected.value: {e}") from e
        else:
            raise ConfigError(f"unknown schema key '{key}' in {path}")
    return Schema(roles=roles, protected_value=protected_value)


def load_csv(path: Path, schema: Schema) -> TabularDataset:
    """
    Load a numeric CSV file and attach column roles.

    Args:
        path: CSV with a header row.
        schema: Column roles; unlisted columns are ordinary features.

    Returns:
        TabularDataset: Dataset in original units (identity statistics).

    Raises:
        MissingColumn: A schema column is not in the header.
        MalformedRow: A cell is empty or non-numeric.
        NonBinaryOutcome: The outcome column is not 0/1.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read {path}: {e}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    for name in schema.roles:
        if name not in frame.columns:
            raise MissingColumn(f"column '{name}' not found in {path}")

    numeric = pd.DataFrame(index=frame.index)
    bad_row, bad_column = None, None
    for name in frame.columns:
        values = pd.to_numeric(frame[name].str.strip(), errors="coerce")
        invalid = np.flatnonzero(values.isna().to_numpy())
        if len(invalid) and (bad_row is None or invalid[0] < bad_row):
            bad_row, bad_column = int(invalid[0]), name
        numeric[name] = values
    if bad_row is not None:
        raise MalformedRow(bad_row, bad_column, frame[bad_column].iloc[bad_row])
    if numeric.empty or len(numeric) < 1:
        raise DataError(f"{path} has no data rows")

    outcome = schema.outcome
    labels = numeric[outcome].to_numpy()
    if not np.isin(labels, (0.0, 1.0)).all():
        raise NonBinaryOutcome(f"outcome column '{outcome}' is not 0/1")

    names = [c for c in frame.columns if c != outcome]
    columns = tuple(
        ColumnMeta(name, schema.roles.get(name, ORDINARY)) for name in names
    )
    dataset = TabularDataset(
        features=numeric[names].to_numpy(dtype=float),
        labels=labels.astype(np.int64),
        columns=columns,
        outcome=outcome,
        protected_value=schema.protected_value,
        source=str(path),
    )
    logger.info(
        "Loaded %s: N=%d d=%d", path, dataset.n_rows, dataset.n_features
    )
    return dataset


def standardize(
    dataset: TabularDataset, stats_source: TabularDataset
) -> TabularDataset:
    """
    Standardize a dataset with statistics of another split.

    Args:
        dataset: Dataset to transform.
        stats_source: Split providing means and stds (usually train).

    Returns:
        TabularDataset: Same rows with features `(x - mean) / std`.

    Raises:
        ZeroVariance: A column is constant on `stats_source`.
    """
    if stats_source.column_names != dataset.column_names:
        raise DataError("stats_source columns differ from dataset columns")
    raw = stats_source.original_features()
    means = raw.mean(axis=0)
    stds = raw.std(axis=0)
    for j, std in enumerate(stds):
        if std <= _ZERO_STD * max(1.0, abs(means[j])):
            raise ZeroVariance(dataset.columns[j].name)
    features = (dataset.original_features() - means) / stds
    return replace(dataset, features=features, means=means, stds=stds)


def invert(dataset: TabularDataset) -> np.ndarray:
    """Inverse of `standardize`: the feature matrix in original units."""
    return dataset.original_features()


def split_indices(n_rows: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """
    Deterministic train/test index split.

    Args:
        n_rows: Number of rows.
        spec: Split fraction and seed.

    Returns:
        tuple[np.ndarray, np.ndarray]: Sorted train and test indices.
    """
    rng = np.random.default_rng(int(spec.seed))
    order = rng.permutation(n_rows)
    n_train = int(round(n_rows * spec.train_fraction))
    if n_rows >= 2:
        n_train = min(max(n_train, 1), n_rows - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split(
    dataset: TabularDataset, spec: SplitSpec
) -> tuple[TabularDataset, TabularDataset]:
    """Split a dataset into disjoint, exhaustive train and test parts."""
    train_idx, test_idx = split_indices(dataset.n_rows, spec)
    return dataset.take(train_idx), dataset.take(test_idx)


def feature_correlations(dataset: TabularDataset, column: int) -> np.ndarray:
    """
    Pearson correlation of every feature column with one column.

    Constant columns yield NaN.
    """
    raw = dataset.original_features()
    centered = raw - raw.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        return centered.T @ centered[:, column] / (norms * norms[column])


def augment_uncorrelated(
    dataset: TabularDataset, k: int, seed: int
) -> TabularDataset:
    """
    Append k synthetic binary columns independent of everything else.

    Args:
        dataset: Dataset to extend.
        k: Number of columns, 1 or 2.
        seed: Seed of the Bernoulli(0.5) draws.

    Returns:
        TabularDataset: Dataset with k extra columns tagged uncorrelated.
    """
    if k not in (1, 2):
        raise ValueError(f"k must be 1 or 2, got {k}")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, 2, size=(dataset.n_rows, k)).astype(float)

    taken = set(dataset.column_names)
    new_columns = []
    for i in range(k):
        name = f"uncorrelated_{i + 1}"
        while name in taken:
            name += "_"
        taken.add(name)
        new_columns.append(ColumnMeta(name, UNCORRELATED))

    augmented = replace(
        dataset,
        features=np.hstack([dataset.features, draws]),
        columns=dataset.columns + tuple(new_columns),
        means=np.concatenate([dataset.means, np.zeros(k)]),
        stds=np.concatenate([dataset.stds, np.ones(k)]),
    )
    sensitive = augmented.sensitive_index
    if sensitive is not None:
        corr = feature_correlations(augmented, sensitive)
        for j in range(dataset.n_features, augmented.n_features):
            logger.info(
                "|corr(%s, %s)| = %.4f",
                augmented.columns[j].name,
                augmented.columns[sensitive].name,
                abs(corr[j]),
            )
    return augmented


def group_masks(dataset: TabularDataset) -> GroupMasks:
    """
    Partition rows by protected-group membership and outcome.

    Raises:
        NoSensitiveColumn: No column is tagged sensitive.
    """
    column = dataset.sensitive_index
    if column is None:
        raise NoSensitiveColumn("no column is tagged sensitive")
    values = dataset.original_features()[:, column]
    protected = np.isclose(
        values, dataset.protected_value, rtol=0.0, atol=_PROTECTED_ATOL
    )
    positive = dataset.labels == 1
    return GroupMasks(
        protected=protected,
        pr_pos=np.flatnonzero(protected & positive),
        pr_neg=np.flatnonzero(protected & ~positive),
        np_pos=np.flatnonzero(~protected & positive),
        np_neg=np.flatnonzero(~protected & ~positive),
    )


def median_absolute_deviation(dataset: TabularDataset) -> np.ndarray:
    """
    Per-column MAD in model space; columns with MAD 0 fall back to std.
    """
    features = dataset.features
    median = np.median(features, axis=0)
    mad = np.median(np.abs(features - median), axis=0)
    fallback = features.std(axis=0)
    mad = np.where(mad > 0, mad, fallback)
    return np.where(mad > 0, mad, 1.0)


def summary(dataset: TabularDataset) -> dict:
    """Dataset summary used by the `ingest` command."""
    info = {
        "source": dataset.source,
        "n_rows": dataset.n_rows,
        "n_features": dataset.n_features,
        "outcome": dataset.outcome,
        "positive_rate": float(dataset.labels.mean()),
        "columns": [
            {"name": c.name, "role": c.role} for c in dataset.column_meta
        ],
    }
    if dataset.sensitive_index is not None:
        masks = group_masks(dataset)
        pr_pos, pr_neg, np_pos, np_neg = masks.sizes
        info["groups"] = {
            "protected_positive": pr_pos,
            "protected_negative": pr_neg,
            "non_protected_positive": np_pos,
            "non_protected_negative": np_neg,
        }
    return info
