# -*- coding: utf-8 -*-
"""Deterministic synthetic datasets for the experiments."""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .tabular import OUTCOME, SENSITIVE, Schema

logger = logging.getLogger(__name__)

CLUSTER_SPREAD = 0.1


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def make_compas_like(n_rows: int, seed: int) -> tuple[pd.DataFrame, Schema]:
    """
    Recidivism-style table with a binary race column.

    The outcome depends on priors, age, juvenile record, charge degree and
    race, so a race-only rule is a plausible biased model.

    Args:
        n_rows: Number of rows.
        seed: Generator seed.

    Returns:
        tuple[pd.DataFrame, Schema]: Integer-valued table and its schema.
    """
    if n_rows < 1:
        raise ValueError(f"n_rows must be >= 1, got {n_rows}")
    rng = np.random.default_rng(seed)
    race = rng.binomial(1, 0.5, n_rows)
    sex = rng.binomial(1, 0.8, n_rows)
    age = np.clip(np.round(rng.normal(34.0, 11.0, n_rows)), 18, 80)
    priors = rng.poisson(np.where(race == 1, 3.5, 2.0))
    juv_fel = rng.poisson(0.1, n_rows)
    charge_degree = rng.binomial(1, 0.65, n_rows)
    length_of_stay = np.round(rng.exponential(15.0, n_rows))

    logit = (
        -1.0 + 0.25 * priors - 0.04 * (age - 34.0) + 0.5 * juv_fel
        + 0.3 * charge_degree + 0.4 * race
    )
    recid = rng.binomial(1, _sigmoid(logit))

    frame = pd.DataFrame({
        "age": age.astype(int),
        "priors_count": priors.astype(int),
        "length_of_stay": length_of_stay.astype(int),
        "juv_fel_count": juv_fel.astype(int),
        "charge_degree": charge_degree.astype(int),
        "sex": sex.astype(int),
        "race": race.astype(int),
        "two_year_recid": recid.astype(int),
    })
    schema = Schema(
        roles={"race": SENSITIVE, "two_year_recid": OUTCOME},
        protected_value=1.0,
    )
    return frame, schema


def make_two_basin(n_rows: int, seed: int) -> tuple[pd.DataFrame, Schema]:
    """
    One continuous score plus a binary group column.

    Negatives of both groups sit in a tight cluster left of the positive
    one and the label depends on `x1` only, so honest recourse costs match
    across groups up to sampling noise.
    """
    if n_rows < 1:
        raise ValueError(f"n_rows must be >= 1, got {n_rows}")
    rng = np.random.default_rng(seed)
    group = rng.binomial(1, 0.5, n_rows)
    label = rng.binomial(1, 0.5, n_rows)
    x1 = np.where(
        label == 1,
        rng.normal(2.0, CLUSTER_SPREAD, n_rows),
        rng.normal(-2.0, CLUSTER_SPREAD, n_rows),
    )
    frame = pd.DataFrame({"x1": x1, "group": group.astype(int), "y": label})
    schema = Schema(
        roles={"group": SENSITIVE, "y": OUTCOME}, protected_value=1.0
    )
    return frame, schema


def write_dataset(
    frame: pd.DataFrame, schema: Schema, directory: Path, stem: str
) -> tuple[Path, Path]:
    """
    Write a table as `<stem>.csv` plus `<stem>.schema`.

    Returns:
        tuple[Path, Path]: CSV path and schema path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    schema_path = directory / f"{stem}.schema"
    frame.to_csv(csv_path, index=False, float_format="%.17g")
    schema_path.write_text(schema.to_text(), encoding="utf-8")
    logger.info("Wrote %s (%d rows) and %s", csv_path, len(frame), schema_path)
    return csv_path, schema_path
