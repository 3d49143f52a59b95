# -*- coding: utf-8 -*-
"""
Auditor-facing measurements: recourse cost disparity, cost reduction under
the hidden shift, accuracy parity, LIME top-k attribution frequencies and
the real-versus-perturbation separation of a PCA projection.
"""
import logging
from dataclasses import asdict, dataclass, replace
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from .counterfactual import (
    Algorithm, CfConfig, CounterfactualResult, DistanceSpec, L1_MAD,
    recourse_costs, run_algorithm,
)
from .errors import DimensionMismatch, EmptyGroup, EmptyList
from .forest import ForestParams, discriminator_accuracy, forest_train
from .lime import LimeConfig, PcaProjection, explain_many, topk_frequency
from .scaffold import ScaffoldClassifier
from .tabular import GroupMasks, TabularDataset
from .types import as_predict_fn

logger = logging.getLogger(__name__)

# real rows and LIME draws count as visibly apart above this separation
PCA_SEPARATION_BOUND = 0.75
SEPARATION_TREE = ForestParams(n_trees=1, max_depth=2, bootstrap=False)


@dataclass(frozen=True)
class RecourseRow:
    """
    One algorithm's line of the recourse audit.

    Means are over converged searches only; costs are measured from the
    original instance, also for the searches started at x + δ.

    Attributes:
        algorithm: Search algorithm name.
        mean_pr: Mean cost of the protected negatives.
        mean_np: Mean cost of the non-protected negatives.
        disparity: |mean_pr - mean_np|.
        mean_np_delta: Mean cost of the non-protected negatives searched
            from x + δ.
        cost_reduction: mean_np / mean_np_delta.
        mean_np_delta_shifted: The same searches measured from x + δ.
        n_pr: Converged searches behind mean_pr.
        n_np: Converged searches behind mean_np.
        n_np_delta: Converged searches behind mean_np_delta.
        rate_pr: Converged fraction of the protected cell.
        rate_np: Converged fraction of the non-protected cell.
        rate_np_delta: Converged fraction of the shifted cell.
        original_units: The three means in de-standardized units.
    """
    algorithm: str
    mean_pr: float
    mean_np: float
    disparity: float
    mean_np_delta: float
    cost_reduction: float
    mean_np_delta_shifted: float
    n_pr: int
    n_np: int
    n_np_delta: int
    rate_pr: float
    rate_np: float
    rate_np_delta: float
    original_units: Optional[dict] = None


@dataclass(frozen=True)
class RecourseReport:
    """Recourse audit of one model and one shift δ."""
    rows: tuple[RecourseRow, ...]
    delta: tuple[float, ...]
    distance: dict

    def row(self, algorithm: str) -> RecourseRow:
        for r in self.rows:
            if r.algorithm == algorithm:
                return r
        raise KeyError(algorithm)

    def to_dict(self) -> dict:
        return {
            "delta": list(self.delta),
            "distance": self.distance,
            "rows": [asdict(r) for r in self.rows],
        }


@dataclass(frozen=True)
class ParityResult:
    """0/1 accuracies at threshold 0.5 and gap = baseline - model."""
    acc_model: float
    acc_baseline: float
    gap: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FrequencyTable:
    """
    Share of explained instances ranking each column first and in the top k.

    Attributes:
        label: Which model was explained.
        columns: Column names in model order.
        k: Depth of the top-k count.
        top1: Per-column top-1 frequency.
        topk: Per-column top-k frequency.
        n_instances: Number of explanations.
    """
    label: str
    columns: tuple[str, ...]
    k: int
    top1: np.ndarray
    topk: np.ndarray
    n_instances: int

    def frequency(self, column: str) -> float:
        return float(self.topk[self.columns.index(column)])

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "column": list(self.columns),
            "top1": self.top1,
            f"top{self.k}": self.topk,
        })

    def to_text(self) -> str:
        header = f"{self.label} ({self.n_instances} instances)\n"
        return header + self.frame().to_string(index=False, float_format="%.3f") + "\n"

    def to_plot_data(self) -> str:
        """Whitespace-separated `column top1 topk` lines for plotting."""
        lines = [f"# {self.label} column top1 top{self.k}"]
        for name, a, b in zip(self.columns, self.top1, self.topk):
            lines.append(f"{name} {a!r} {b!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "k": self.k,
            "n_instances": self.n_instances,
            "top1": dict(zip(self.columns, self.top1.tolist())),
            f"top{self.k}": dict(zip(self.columns, self.topk.tolist())),
        }


def _pick(candidates: Sequence[CounterfactualResult]) -> Optional[CounterfactualResult]:
    # candidate lists come sorted by cost, so the first converged is cheapest
    for result in candidates:
        if result.converged:
            return result
    return None


def _cell(
    name: str,
    X: np.ndarray,
    candidates: list[list[CounterfactualResult]],
) -> tuple[np.ndarray, list[CounterfactualResult], float]:
    picked = [_pick(c) for c in candidates]
    keep = [i for i, r in enumerate(picked) if r is not None]
    if not keep:
        raise EmptyGroup(f"no converged search in cell '{name}' ({len(X)} instances)")
    chosen = [picked[i] for i in keep]
    return np.asarray(keep), chosen, len(keep) / len(X)


def _original_spec(spec: DistanceSpec, stds: np.ndarray) -> DistanceSpec:
    if spec.kind == L1_MAD:
        return DistanceSpec(spec.kind, mad=spec.mad * stds)
    return spec


def _mean_cost(spec, X, chosen, stds=None) -> float:
    if stds is None:
        return float(np.mean(recourse_costs(spec, X, chosen)))
    diff = (np.array([r.x_cf for r in chosen]) - X) * stds
    return float(np.mean(_original_spec(spec, stds).value(diff)))


def _reduction(mean_np: float, mean_np_delta: float) -> float:
    if mean_np_delta == 0:
        return 1.0 if mean_np == 0 else float("inf")
    return mean_np / mean_np_delta


def recourse_audit(
    model: Any,
    delta: np.ndarray,
    dataset: TabularDataset,
    masks: GroupMasks,
    spec: DistanceSpec,
    cf_config: CfConfig,
    algorithms: Sequence[Algorithm],
    max_instances: Optional[int] = None,
) -> RecourseReport:
    """
    Run every algorithm on the protected negatives, the non-protected
    negatives and the non-protected negatives shifted by δ.

    Args:
        model: Differentiable model under audit.
        delta: Hidden shift, in model space.
        dataset: Rows in model space; its statistics give original units.
        masks: Group partition of `dataset` (negatives by label).
        spec: Audit distance.
        cf_config: Search schedule.
        algorithms: Searches to audit, one report row each.
        max_instances: Use at most this many leading rows of each group.

    Returns:
        RecourseReport: One row per algorithm.

    Raises:
        EmptyGroup: A group has no negative rows, or a cell has no
            converged search.
    """
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (dataset.n_features,):
        raise DimensionMismatch(
            f"delta of shape {delta.shape}, dataset has {dataset.n_features} columns"
        )
    pr_idx = np.asarray(masks.pr_neg)[:max_instances]
    np_idx = np.asarray(masks.np_neg)[:max_instances]
    if len(pr_idx) == 0 or len(np_idx) == 0:
        raise EmptyGroup(
            f"{len(pr_idx)} protected and {len(np_idx)} non-protected negatives"
        )
    X_pr = dataset.features[pr_idx]
    X_np = dataset.features[np_idx]
    shifted = X_np + delta
    stds = np.asarray(dataset.stds)

    rows = []
    for algorithm in algorithms:
        keep_pr, chosen_pr, rate_pr = _cell(
            "protected", X_pr, run_algorithm(model, X_pr, spec, cf_config, algorithm)
        )
        keep_np, chosen_np, rate_np = _cell(
            "non-protected", X_np, run_algorithm(model, X_np, spec, cf_config, algorithm)
        )
        keep_sh, chosen_sh, rate_sh = _cell(
            "non-protected+delta", shifted,
            run_algorithm(model, shifted, spec, cf_config, algorithm),
        )
        mean_pr = _mean_cost(spec, X_pr[keep_pr], chosen_pr)
        mean_np = _mean_cost(spec, X_np[keep_np], chosen_np)
        mean_sh = _mean_cost(spec, X_np[keep_sh], chosen_sh)
        original = {
            "mean_pr": _mean_cost(spec, X_pr[keep_pr], chosen_pr, stds),
            "mean_np": _mean_cost(spec, X_np[keep_np], chosen_np, stds),
            "mean_np_delta": _mean_cost(spec, X_np[keep_sh], chosen_sh, stds),
        }
        row = RecourseRow(
            algorithm=algorithm.name,
            mean_pr=mean_pr,
            mean_np=mean_np,
            disparity=abs(mean_pr - mean_np),
            mean_np_delta=mean_sh,
            cost_reduction=_reduction(mean_np, mean_sh),
            mean_np_delta_shifted=_mean_cost(spec, shifted[keep_sh], chosen_sh),
            n_pr=len(keep_pr),
            n_np=len(keep_np),
            n_np_delta=len(keep_sh),
            rate_pr=rate_pr,
            rate_np=rate_np,
            rate_np_delta=rate_sh,
            original_units=original,
        )
        logger.info(
            "audit %s: protected %.4f, non-protected %.4f, shifted %.4f, "
            "reduction %.2fx", row.algorithm, row.mean_pr, row.mean_np,
            row.mean_np_delta, row.cost_reduction,
        )
        rows.append(row)
    return RecourseReport(tuple(rows), tuple(delta.tolist()), spec.to_dict())


def format_report(report: RecourseReport) -> str:
    """Aligned text table of a recourse report."""
    frame = pd.DataFrame([{
        "algorithm": r.algorithm,
        "protected": r.mean_pr,
        "non-protected": r.mean_np,
        "disparity": r.disparity,
        "non-protected+delta": r.mean_np_delta,
        "reduction": r.cost_reduction,
        "converged": f"{r.rate_pr:.2f}/{r.rate_np:.2f}/{r.rate_np_delta:.2f}",
    } for r in report.rows])
    return frame.to_string(index=False, float_format="%.4f") + "\n"


def _accuracy(model: Any, X: np.ndarray, y: np.ndarray) -> float:
    predictions = (as_predict_fn(model)(X) >= 0.5).astype(np.int64)
    return float(np.mean(predictions == y))


def accuracy_parity(model: Any, baseline: Any, X: np.ndarray, y: np.ndarray) -> ParityResult:
    """Accuracy of a model next to its baseline on one shared test set."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).reshape(-1)
    if len(X) != len(y):
        raise DimensionMismatch(f"{len(y)} labels for {len(X)} rows")
    if len(X) == 0:
        raise EmptyList("accuracy over an empty test set")
    acc_model = _accuracy(model, X, y)
    acc_baseline = _accuracy(baseline, X, y)
    return ParityResult(acc_model, acc_baseline, acc_baseline - acc_model)


def pca_separation(projection: PcaProjection) -> float:
    """
    In-sample accuracy of one depth-2 tree telling real rows from
    perturbations on the projected coordinates.
    """
    is_real = projection.source == 1
    real, fake = projection.coordinates[is_real], projection.coordinates[~is_real]
    params = replace(SEPARATION_TREE, max_features=real.shape[1])
    stump = forest_train(real, fake, params)
    return discriminator_accuracy(stump, real, fake)


def frequency_table(
    label: str,
    explanations: Sequence,
    columns: Sequence[str],
    k: int,
) -> FrequencyTable:
    return FrequencyTable(
        label=label,
        columns=tuple(columns),
        k=k,
        top1=topk_frequency(explanations, 1),
        topk=topk_frequency(explanations, k),
        n_instances=len(explanations),
    )


def attribution_audit(
    model: Any,
    dataset: TabularDataset,
    config: LimeConfig,
    k: int = 3,
    indices: Optional[Sequence[int]] = None,
    label: str = "model",
) -> dict[str, FrequencyTable]:
    """
    LIME top-k frequencies over dataset rows.

    A scaffold is audited three times: its biased model, the scaffold
    itself and its unbiased model, all on the same perturbation draws.
    Any other model yields one table under `label`.
    """
    rows = np.arange(dataset.n_rows) if indices is None else np.asarray(indices, dtype=np.int64)
    if len(rows) == 0:
        raise EmptyList("attribution audit over no rows")
    X = dataset.features[rows]
    if isinstance(model, ScaffoldClassifier):
        targets = {
            "biased": model.biased,
            "scaffold": model,
            "unbiased": model.unbiased,
        }
    else:
        targets = {label: model}
    tables = {}
    for name, target in targets.items():
        explanations = explain_many(target, X, config, indices=rows)
        tables[name] = frequency_table(name, explanations, dataset.column_names, k)
        logger.info("attribution audit of %s over %d rows", name, len(rows))
    return tables
