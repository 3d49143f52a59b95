# -*- coding: utf-8 -*-
"""
Adversarial training against hill-climbing counterfactual explainers.

The trained model keeps recourse costs of the protected and non-protected
negatives close, while a hidden shift δ added to non-protected instances
lands their counterfactual search in a much cheaper basin. Costs depend on
θ and δ only through the counterfactual search, so gradients flow through
the search either by implicit differentiation of its optimality condition
or by unrolling its last descent steps.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
import pandas as pd

from .counterfactual import (
    CfConfig, CounterfactualResult, DistanceSpec, find_counterfactual,
    objective_grad, recourse_costs, search_batch,
)
from .errors import (
    CgNoConvergence, DidNotConverge, DimensionMismatch, EmptyGroupBatch,
    NonFiniteLoss, NotStationary,
)
from .mlp import (
    MlpModel, fit_mlp, mlp_forward, mlp_grad_input, mlp_grad_params,
    mlp_grad_params_output, mlp_hvp_input, mlp_loss,
)
from .seeds import ATTACK, MODEL_INIT, derive_seed
from .tabular import GroupMasks, TabularDataset

logger = logging.getLogger(__name__)

MAX_WORKERS = 8
CG_TOLERANCE = 1e-6
CG_MAX_ITER = 500
POLISH_STEPS = 20
POLISH_TOLERANCE = 1e-6
STEP_HALVINGS = 5
BASIN_LOGIT = 6.0

IMPLICIT = "implicit"
UNROLLED = "unrolled"
HYPERGRAD_MODES = (IMPLICIT, UNROLLED)

TRACE_COLUMNS = (
    "step", "fairness", "unfairness", "perturbation", "accuracy", "total",
    "c_pr", "c_np", "c_np_delta", "unconverged", "delta_norm",
)


@dataclass(frozen=True)
class AttackWeights:
    """
    Weights of the adversarial loss terms.

    Attributes:
        w_fair: Squared gap between the group mean costs.
        w_unfair: Mean cost of counterfactuals searched from x + δ.
        w_delta: Mean size d(x, x + δ) of the shift.
        w_acc: Cross-entropy of the model.
    """
    w_fair: float = 1.0
    w_unfair: float = 1.0
    w_delta: float = 0.5
    w_acc: float = 2.0

    def __post_init__(self):
        values = (self.w_fair, self.w_unfair, self.w_delta, self.w_acc)
        if min(values) < 0:
            raise ValueError(f"loss weights must be >= 0, got {values}")
        if max(values) == 0:
            raise ValueError("at least one loss weight must be > 0")


@dataclass(frozen=True)
class AttackConfig:
    """
    Schedule of the adversarial training.

    Attributes:
        weights: Loss term weights.
        outer_steps: Alternating θ/δ updates.
        learning_rate: Step size of the θ updates and of pre-training.
        delta_learning_rate: Step size of the δ updates.
        hypergrad: implicit or unrolled.
        unroll_steps: Descent steps differentiated in unrolled mode, and
            the fallback when conjugate gradient fails.
        cf_config: Schedule of the searches run inside training.
        batch_size: Negatives drawn per group at every step.
        pretrain_steps: Accuracy-only steps before the adversarial loop.
        seed: Seed of initialization and batch draws.
        log_every: Steps between progress lines.
        seed_basin: Start from a model with a shift basin and δ inside it
            (see `seed_shift_basin`) when no δ is given.
        basin_margin: Gap between the data and the basin plane.
        basin_steepness: Slope of the basin unit across its plane.
    """
    weights: AttackWeights = AttackWeights()
    outer_steps: int = 200
    learning_rate: float = 0.05
    delta_learning_rate: float = 0.05
    hypergrad: str = IMPLICIT
    unroll_steps: int = 20
    cf_config: CfConfig = CfConfig(lambda_init=1.0, max_lambda_rounds=3,
                                   inner_steps=200)
    batch_size: int = 32
    pretrain_steps: int = 200
    seed: int = 0
    log_every: int = 10
    seed_basin: bool = True
    basin_margin: float = 0.25
    basin_steepness: float = 40.0

    def __post_init__(self):
        if self.hypergrad not in HYPERGRAD_MODES:
            raise ValueError(f"unknown hypergradient mode '{self.hypergrad}'")
        if self.unroll_steps < 1:
            raise ValueError("unroll_steps must be >= 1")
        if self.outer_steps < 0 or self.pretrain_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.learning_rate <= 0 or self.delta_learning_rate <= 0:
            raise ValueError("learning rates must be > 0")
        if self.batch_size < 1 or self.log_every < 1:
            raise ValueError("batch_size and log_every must be >= 1")
        if self.basin_margin <= 0 or self.basin_steepness <= 0:
            raise ValueError("basin_margin and basin_steepness must be > 0")


@dataclass(frozen=True)
class StepRecord:
    """Loss terms (weighted) and raw group costs of one outer step."""
    step: int
    fairness: float
    unfairness: float
    perturbation: float
    accuracy: float
    total: float
    c_pr: float
    c_np: float
    c_np_delta: float
    unconverged: int
    delta_norm: float


@dataclass(frozen=True)
class RecourseAttackModel:
    """
    Outcome of `train_attack`.

    Attributes:
        model: Trained model θ.
        delta: Hidden shift δ, in model space.
        trace: One record per completed outer step.
    """
    model: MlpModel
    delta: np.ndarray
    trace: tuple[StepRecord, ...] = field(default=(), repr=False)

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float).reshape(-1)
        if len(delta) != self.model.input_size:
            raise DimensionMismatch(
                f"delta has {len(delta)} entries, model expects {self.model.input_size}"
            )
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.trace], columns=list(TRACE_COLUMNS))

    def write_trace(self, path: Path) -> Path:
        self.trace_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    def delta_text(self) -> str:
        """One full-precision value per line."""
        return "".join(f"{value!r}\n" for value in self.delta.tolist())


@dataclass(frozen=True)
class Hypergradient:
    """Gradient of one recourse cost with respect to θ and to the search anchor."""
    theta: np.ndarray
    anchor: np.ndarray


class InnerProblem(Protocol):
    """Smooth inner objective G(z; θ, a) minimized over z."""

    @property
    def theta_size(self) -> int:
        ...

    def grad(self, z: np.ndarray) -> np.ndarray:
        """∇_z G."""

    def hvp(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(∇²_z G) v."""

    def theta_vjp(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(∂∇_z G / ∂θ)ᵀ v."""

    def anchor_vjp(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(∂∇_z G / ∂a)ᵀ v."""


@dataclass(frozen=True)
class CounterfactualProblem:
    """
    The counterfactual objective G(z) = λ (f_θ(z) - 1)² + d(a, z) of one
    search anchored at a.
    """
    model: MlpModel
    spec: DistanceSpec
    lam: float
    anchor: np.ndarray

    @property
    def theta_size(self) -> int:
        return len(self.model.params)

    def grad(self, z: np.ndarray) -> np.ndarray:
        return objective_grad(self.model, self.spec, self.lam, self.anchor, z)

    def hvp(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        f = mlp_forward(self.model, z)
        g = mlp_grad_input(self.model, z)
        curvature = (g @ v) * g + (f - 1.0) * mlp_hvp_input(self.model, z, v)
        return 2.0 * self.lam * curvature + self.spec.hvp(z - self.anchor, v)[0]

    def theta_vjp(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(v))
        if norm == 0:
            return np.zeros(self.theta_size)
        f = mlp_forward(self.model, z)
        g = mlp_grad_input(self.model, z)
        grad_theta = mlp_grad_params_output(self.model, z[None])
        # ∇_θ (vᵀ ∇_z f) by central differences along v
        u = v / norm
        eps = 1e-4 * max(1.0, float(np.linalg.norm(z)))
        mixed = (
            mlp_grad_params_output(self.model, (z + eps * u)[None])
            - mlp_grad_params_output(self.model, (z - eps * u)[None])
        ) * (norm / (2.0 * eps))
        return 2.0 * self.lam * ((g @ v) * grad_theta + (f - 1.0) * mixed)

    def anchor_vjp(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        return -self.spec.hvp(z - self.anchor, v)[0]


@dataclass(frozen=True)
class QuadraticProblem:
    """G(z) = w ‖z - θ‖² + ‖z - a‖², minimized at (w θ + a) / (w + 1)."""
    theta: np.ndarray
    anchor: np.ndarray
    theta_weight: float = 1.0

    @property
    def theta_size(self) -> int:
        return len(self.theta)

    def minimizer(self) -> np.ndarray:
        w = self.theta_weight
        return (w * self.theta + self.anchor) / (w + 1.0)

    def grad(self, z: np.ndarray) -> np.ndarray:
        return 2.0 * self.theta_weight * (z - self.theta) + 2.0 * (z - self.anchor)

    def hvp(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        return 2.0 * (self.theta_weight + 1.0) * v

    def theta_vjp(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        return -2.0 * self.theta_weight * v

    def anchor_vjp(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        return -2.0 * v


def conjugate_gradient(
    matvec,
    b: np.ndarray,
    tol: float = CG_TOLERANCE,
    max_iter: int = CG_MAX_ITER,
) -> np.ndarray:
    """
    Solve A x = b for a symmetric positive-definite operator A.

    Args:
        matvec: Function returning A p.
        b: Right-hand side.
        tol: Stop once ‖r‖ <= tol ‖b‖.
        max_iter: Iterations at most.

    Raises:
        CgNoConvergence: A direction had pᵀAp <= 0, or the residual never
            reached the tolerance.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0:
        return x
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    for iteration in range(max_iter):
        Ap = matvec(p)
        curvature = float(p @ Ap)
        if not np.isfinite(curvature) or curvature <= 0:
            raise CgNoConvergence(
                f"operator is not positive definite (pᵀAp = {curvature:.3g} "
                f"at iteration {iteration})"
            )
        alpha = rr / curvature
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= tol * b_norm:
            return x
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise CgNoConvergence(
        f"residual {np.sqrt(rr):.3g} above {tol * b_norm:.3g} after {max_iter} iterations"
    )


def polish_stationary(
    problem: InnerProblem,
    z: np.ndarray,
    tol: float = POLISH_TOLERANCE,
    max_steps: int = POLISH_STEPS,
) -> np.ndarray:
    """
    Newton steps z ← z - H⁻¹ ∇_z G from a search endpoint until ‖∇_z G‖ <= tol.

    Each step is halved until it lowers ‖∇_z G‖.

    Raises:
        NotStationary: ‖∇_z G‖ is still above tol after max_steps.
        CgNoConvergence: The Hessian at an iterate is not positive definite.
    """
    z = np.asarray(z, dtype=float)
    grad = problem.grad(z)
    norm = float(np.linalg.norm(grad))
    for _ in range(max_steps):
        if norm <= tol:
            return z
        step = conjugate_gradient(lambda p: problem.hvp(z, p), grad)
        scale = 1.0
        for _ in range(STEP_HALVINGS * 2):
            candidate = z - scale * step
            candidate_grad = problem.grad(candidate)
            candidate_norm = float(np.linalg.norm(candidate_grad))
            if candidate_norm < norm:
                break
            scale *= 0.5
        else:
            break
        z, grad, norm = candidate, candidate_grad, candidate_norm
    if norm <= tol:
        return z
    raise NotStationary(f"gradient norm {norm:.3g} above {tol:.3g} after polishing")


def implicit_hypergrad(
    problem: InnerProblem, z: np.ndarray, cost_grad: np.ndarray
) -> Hypergradient:
    """
    Hypergradient at a stationary point z of the inner problem.

    From ∇_z G(z*(θ, a); θ, a) = 0, dz*/dθ = -H⁻¹ ∂²G/∂z∂θ, so the cost
    gradient is -(∂²G/∂z∂θ)ᵀ H⁻¹ ∇_z cost, and likewise for the anchor.
    """
    v = conjugate_gradient(lambda p: problem.hvp(z, p), cost_grad)
    return Hypergradient(-problem.theta_vjp(z, v), -problem.anchor_vjp(z, v))


def unrolled_hypergrad(
    problem: InnerProblem,
    steps: Sequence[tuple[np.ndarray, float]],
    cost_grad: np.ndarray,
) -> Hypergradient:
    """
    Reverse-mode derivative through descent steps z ← z - η ∇_z G(z).

    Args:
        problem: Inner objective the steps descended.
        steps: (iterate before the step, step size) pairs, oldest first;
            the iterate before the first step is held constant.
        cost_grad: ∇_z cost at the point reached by the last step.
    """
    adjoint = np.asarray(cost_grad, dtype=float)
    theta = np.zeros(problem.theta_size)
    anchor = np.zeros_like(adjoint)
    for z, eta in reversed(steps):
        theta -= eta * problem.theta_vjp(z, adjoint)
        anchor -= eta * problem.anchor_vjp(z, adjoint)
        adjoint = adjoint - eta * problem.hvp(z, adjoint)
    return Hypergradient(theta, anchor)


def _unmoved(model: MlpModel, spec: DistanceSpec, x, anchor) -> Hypergradient:
    # the anchor was already positive, so x_cf = a and cost = d(x, a)
    return Hypergradient(np.zeros(len(model.params)), spec.grad(anchor - x)[0])


def _prepare(model: MlpModel, x, anchor) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    anchor = x if anchor is None else np.asarray(anchor, dtype=float)
    if x.ndim != 1 or len(x) != model.input_size or anchor.shape != x.shape:
        raise DimensionMismatch(
            f"instance {x.shape} / anchor {anchor.shape}, "
            f"model expects ({model.input_size},)"
        )
    return x, anchor


def hypergrad_implicit(
    model: MlpModel,
    x: np.ndarray,
    spec: DistanceSpec,
    cf_config: CfConfig = CfConfig(),
    result: Optional[CounterfactualResult] = None,
    anchor: Optional[np.ndarray] = None,
) -> Hypergradient:
    """
    Gradient of d(x, x_cf) through a converged search, by implicit
    differentiation at its final λ. The endpoint is first polished to a
    stationary point of that round's objective.

    Args:
        model: Model searched against.
        x: Instance the cost is measured from.
        spec: Distance of the search and of the cost.
        cf_config: Schedule used when `result` is not given.
        result: Search result to differentiate.
        anchor: Start and anchor of the search; x when omitted.

    Raises:
        DidNotConverge: The search ended below the target.
        CgNoConvergence: The Hessian solve failed.
        NotStationary: Polishing did not reach a stationary point.
    """
    x, anchor = _prepare(model, x, anchor)
    if result is None:
        result = find_counterfactual(model, anchor, spec, cf_config)
    if not result.converged:
        raise DidNotConverge(
            f"search stopped at probability {result.model_prob:.4f}"
        )
    if result.rounds_used == 0:
        return _unmoved(model, spec, x, anchor)
    problem = CounterfactualProblem(model, spec, result.final_lambda, anchor)
    z = polish_stationary(problem, result.x_cf)
    return implicit_hypergrad(problem, z, spec.grad(z - x)[0])


def hypergrad_unrolled(
    model: MlpModel,
    x: np.ndarray,
    spec: DistanceSpec,
    cf_config: CfConfig,
    K: int,
    result: Optional[CounterfactualResult] = None,
    anchor: Optional[np.ndarray] = None,
) -> Hypergradient:
    """
    Gradient of d(x, x_cf) through the last K descent steps of the search.

    A supplied `result` must have been searched with `record_last >= K`
    to use all K steps.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    x, anchor = _prepare(model, x, anchor)
    if result is None:
        result = find_counterfactual(model, anchor, spec, cf_config, record_last=K)
    if result.rounds_used == 0:
        return _unmoved(model, spec, x, anchor)
    problem = CounterfactualProblem(model, spec, result.final_lambda, anchor)
    steps = result.trajectory[-K:]
    return unrolled_hypergrad(problem, steps, spec.grad(result.x_cf - x)[0])


@dataclass(frozen=True)
class AttackBatches:
    """
    Rows of one loss evaluation, in model space.

    Attributes:
        pr_neg: Protected negatives.
        np_neg: Non-protected negatives.
        X: Rows of the accuracy term.
        y: Labels of X.
    """
    pr_neg: np.ndarray
    np_neg: np.ndarray
    X: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted loss terms and the raw mean costs behind them."""
    fairness: float
    unfairness: float
    perturbation: float
    accuracy: float
    c_pr: float
    c_np: float
    c_np_delta: float
    unconverged: int = 0

    @property
    def total(self) -> float:
        return self.fairness + self.unfairness + self.perturbation + self.accuracy


@dataclass(frozen=True)
class _Searches:
    pr: list[CounterfactualResult]
    np_: list[CounterfactualResult]
    np_delta: list[CounterfactualResult]

    @property
    def unconverged(self) -> int:
        return sum(not r.converged for r in self.pr + self.np_ + self.np_delta)


def _check_batches(batches: AttackBatches):
    if len(batches.pr_neg) == 0 or len(batches.np_neg) == 0:
        raise EmptyGroupBatch(
            f"negative batches hold {len(batches.pr_neg)} protected and "
            f"{len(batches.np_neg)} non-protected rows"
        )


def _run_searches(model, delta, batches, spec, cf_config, record_last=0) -> _Searches:
    return _Searches(
        pr=search_batch(model, batches.pr_neg, spec, cf_config, record_last=record_last),
        np_=search_batch(model, batches.np_neg, spec, cf_config, record_last=record_last),
        np_delta=search_batch(model, batches.np_neg + delta, spec, cf_config,
                              record_last=record_last),
    )


def _breakdown(
    model: MlpModel,
    delta: np.ndarray,
    batches: AttackBatches,
    spec: DistanceSpec,
    weights: AttackWeights,
    searches: Optional[_Searches],
) -> LossBreakdown:
    perturbation = weights.w_delta * float(spec.value(delta[None])[0])
    accuracy = weights.w_acc * mlp_loss(model, batches.X, batches.y)
    if searches is None:
        nan = float("nan")
        return LossBreakdown(0.0, 0.0, perturbation, accuracy, nan, nan, nan)
    c_pr = float(np.mean(recourse_costs(spec, batches.pr_neg, searches.pr)))
    c_np = float(np.mean(recourse_costs(spec, batches.np_neg, searches.np_)))
    c_np_delta = float(np.mean(recourse_costs(spec, batches.np_neg, searches.np_delta)))
    return LossBreakdown(
        fairness=weights.w_fair * (c_pr - c_np) ** 2,
        unfairness=weights.w_unfair * c_np_delta,
        perturbation=perturbation,
        accuracy=accuracy,
        c_pr=c_pr,
        c_np=c_np,
        c_np_delta=c_np_delta,
        unconverged=searches.unconverged,
    )


def adversarial_loss(
    model: MlpModel,
    delta: np.ndarray,
    batches: AttackBatches,
    spec: DistanceSpec,
    cf_config: CfConfig,
    weights: AttackWeights,
) -> tuple[float, LossBreakdown]:
    """
    w_fair (C_pr - C_np)² + w_unfair C_npδ + w_delta d(x, x + δ) + w_acc L.

    C_pr and C_np are mean recourse costs of the negative batches, C_npδ the
    mean cost of counterfactuals searched from x + δ for the non-protected
    batch, measured from x. Non-converged searches count with their best
    iterate.

    Raises:
        EmptyGroupBatch: A negative batch is empty.
    """
    _check_batches(batches)
    delta = np.asarray(delta, dtype=float)
    searches = _run_searches(model, delta, batches, spec, cf_config)
    breakdown = _breakdown(model, delta, batches, spec, weights, searches)
    return breakdown.total, breakdown


def _row_hypergrad(model, x, anchor, result, spec, config: AttackConfig) -> Hypergradient:
    if config.hypergrad == IMPLICIT and result.converged:
        try:
            return hypergrad_implicit(model, x, spec, config.cf_config, result, anchor)
        except (CgNoConvergence, NotStationary) as e:
            logger.debug("Falling back to unrolled hypergradient: %s", e)
    return hypergrad_unrolled(model, x, spec, config.cf_config, config.unroll_steps,
                              result, anchor)


def _mean_hypergrad(
    model: MlpModel,
    X: np.ndarray,
    anchors: np.ndarray,
    results: Sequence[CounterfactualResult],
    spec: DistanceSpec,
    config: AttackConfig,
) -> Hypergradient:
    def one(i: int) -> Hypergradient:
        return _row_hypergrad(model, X[i], anchors[i], results[i], spec, config)

    with ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
        grads = list(executor.map(one, range(len(X))))
    return Hypergradient(
        np.mean([g.theta for g in grads], axis=0),
        np.mean([g.anchor for g in grads], axis=0),
    )


def _draw(rng: np.random.Generator, indices: np.ndarray, size: int) -> np.ndarray:
    if size >= len(indices):
        return np.asarray(indices)
    return np.sort(rng.choice(indices, size, replace=False))


def _check_finite(step: int, name: str, values) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteLoss(f"step {step}: {name} is not finite")


def seed_shift_basin(
    model: MlpModel,
    dataset: TabularDataset,
    masks: GroupMasks,
    margin: float = 0.25,
    steepness: float = 40.0,
) -> tuple[MlpModel, np.ndarray]:
    """
    Widen the hidden layer by one unit that raises the logit only past a
    plane beyond every training row, and return a δ that carries the
    non-protected negatives just across it.

    The plane's normal u points from the mean protected negative to the
    mean non-protected negative, and the plane sits `margin` past the
    largest u·x of the data. The unit is saturated off on the data side,
    so logits of the rows move by at most about exp(-2 s margin), while a
    search started from x + δ is positive at once.

    Args:
        model: Model with exactly one hidden layer.
        dataset: Training rows in model space.
        masks: Group partition of `dataset`.
        margin: Gap between the data and the plane.
        steepness: Slope s of the unit across the plane.

    Returns:
        tuple[MlpModel, np.ndarray]: Widened model and the starting δ, or
        the model unchanged and δ = 0 when it has several hidden layers or
        the group means coincide.
    """
    d = dataset.n_features
    if len(model.layer_sizes) != 3:
        logger.warning("Shift basin needs one hidden layer, got %s; starting from δ = 0",
                       model.layer_sizes)
        return model, np.zeros(d)
    X = dataset.features
    normal = X[masks.np_neg].mean(axis=0) - X[masks.pr_neg].mean(axis=0)
    norm = float(np.linalg.norm(normal))
    if norm == 0:
        logger.warning("Group means coincide; starting from δ = 0")
        return model, np.zeros(d)
    u = normal / norm
    projection = X @ u
    plane = float(projection.max()) + margin
    delta = u * (plane + 1.0 / steepness - float(projection[masks.np_neg].min()))
    floor = float(model.logits(X[masks.np_neg] + delta).min())
    lift = BASIN_LOGIT + max(-floor, 0.0)
    if model.activation == "tanh":
        # weight (1 + tanh(·)) is ~0 on the data side and >= lift at x + δ
        weight = offset = lift / (1.0 + np.tanh(1.0))
    else:
        weight, offset = lift, 0.0
    (W1, b1), (W2, b2) = model.layers()
    params = np.concatenate([
        np.column_stack([W1, steepness * u]).reshape(-1),
        np.append(b1, -steepness * plane),
        np.append(W2[:, 0], weight),
        b2 + offset,
    ])
    seeded = MlpModel((d, model.layer_sizes[1] + 1, 1), params, model.activation)
    logger.info("Seeded shift basin: plane at %.4f, |δ| = %.4f, lift %.2f",
                plane, float(np.linalg.norm(delta)), lift)
    return seeded, delta


def _theta_step(model, delta, grad, batches, spec, config: AttackConfig,
                total: float, searches: Optional[_Searches], record_last: int):
    """Step on θ, halved until the batch loss does not increase."""
    eta = config.learning_rate
    for _ in range(STEP_HALVINGS + 1):
        trial = model.with_params(model.params - eta * grad)
        trial_searches = None
        if searches is not None:
            trial_searches = _run_searches(trial, delta, batches, spec,
                                           config.cf_config, record_last)
        if _breakdown(trial, delta, batches, spec, config.weights,
                      trial_searches).total <= total:
            return trial, trial_searches
        eta *= 0.5
    return model, searches


def _shift_loss(model, delta, rows, spec, config: AttackConfig) -> float:
    w = config.weights
    loss = w.w_delta * float(spec.value(delta[None])[0])
    if w.w_unfair > 0:
        results = search_batch(model, rows + delta, spec, config.cf_config)
        loss += w.w_unfair * float(np.mean(recourse_costs(spec, rows, results)))
    return loss


def _delta_step(model, delta, grad, rows, spec, config: AttackConfig) -> np.ndarray:
    """Step on δ, halved until the shift terms over `rows` do not increase."""
    current = _shift_loss(model, delta, rows, spec, config)
    eta = config.delta_learning_rate
    for _ in range(STEP_HALVINGS + 1):
        candidate = delta - eta * grad
        if _shift_loss(model, candidate, rows, spec, config) <= current:
            return candidate
        eta *= 0.5
    return delta


def train_attack(
    dataset: TabularDataset,
    masks: GroupMasks,
    config: AttackConfig = AttackConfig(),
    hidden: Sequence[int] = (16,),
    activation: str = "tanh",
    spec: Optional[DistanceSpec] = None,
    model: Optional[MlpModel] = None,
    delta: Optional[np.ndarray] = None,
) -> RecourseAttackModel:
    """
    Alternate θ and δ gradient steps on the adversarial loss.

    After accuracy-only pre-training, the model is widened with a shift
    basin and δ starts inside it (`seed_shift_basin`) unless δ is given or
    the unfairness weight is 0. Every outer step draws a batch of negatives
    per group and takes a θ step on w_acc ∇L plus the hypergradients of the
    fairness and unfairness terms, halved until the batch loss does not
    increase. Then, with the new θ fixed, it takes a δ step on the
    unfairness and shift terms, halved until those terms over all
    non-protected negatives do not increase.

    Args:
        dataset: Training rows in model space.
        masks: Group partition of `dataset`.
        config: Training schedule.
        hidden: Hidden layer sizes of a freshly initialized model.
        activation: Hidden activation of a freshly initialized model.
        spec: Distance of the searches and costs; L2 when omitted.
        model: Starting model instead of a fresh one.
        delta: Starting shift instead of the seeded one.

    Returns:
        RecourseAttackModel: Final θ, δ and the per-step trace.

    Raises:
        EmptyGroupBatch: A group has no negative rows.
        NonFiniteLoss: A loss term or gradient became NaN or infinite.
    """
    if len(masks.pr_neg) == 0 or len(masks.np_neg) == 0:
        raise EmptyGroupBatch("both groups need negative-outcome rows")
    spec = spec or DistanceSpec.l2()
    X, y = dataset.features, dataset.labels
    d = dataset.n_features
    w = config.weights
    if model is None:
        model = MlpModel.initialize(
            (d, *hidden, 1), activation, seed=derive_seed(config.seed, MODEL_INIT)
        )
    if config.pretrain_steps:
        model = fit_mlp(model, X, y, config.pretrain_steps, config.learning_rate)
    if delta is None and config.seed_basin and w.w_unfair > 0:
        model, delta = seed_shift_basin(model, dataset, masks, config.basin_margin,
                                        config.basin_steepness)
    delta = np.zeros(d) if delta is None else np.array(delta, dtype=float)
    if delta.shape != (d,):
        raise DimensionMismatch(f"delta of shape {delta.shape}, expected ({d},)")

    searching = w.w_fair > 0 or w.w_unfair > 0
    record_last = config.unroll_steps
    rng = np.random.default_rng(derive_seed(config.seed, ATTACK))
    np_rows = X[masks.np_neg]
    trace: list[StepRecord] = []

    for step in range(config.outer_steps):
        batches = AttackBatches(
            pr_neg=X[_draw(rng, masks.pr_neg, config.batch_size)],
            np_neg=X[_draw(rng, masks.np_neg, config.batch_size)],
            X=X,
            y=y,
        )
        searches = None
        if searching:
            searches = _run_searches(model, delta, batches, spec, config.cf_config,
                                     record_last)
        breakdown = _breakdown(model, delta, batches, spec, w, searches)
        _check_finite(step, "adversarial loss", [
            breakdown.fairness, breakdown.unfairness,
            breakdown.perturbation, breakdown.accuracy,
        ])

        grad_theta = np.zeros(len(model.params))
        if w.w_acc > 0:
            grad_theta += w.w_acc * mlp_grad_params(model, X, y)
        if w.w_fair > 0:
            g_pr = _mean_hypergrad(model, batches.pr_neg, batches.pr_neg,
                                   searches.pr, spec, config)
            g_np = _mean_hypergrad(model, batches.np_neg, batches.np_neg,
                                   searches.np_, spec, config)
            gap = breakdown.c_pr - breakdown.c_np
            grad_theta += 2.0 * w.w_fair * gap * (g_pr.theta - g_np.theta)
        if w.w_unfair > 0:
            g_shift = _mean_hypergrad(model, batches.np_neg, batches.np_neg + delta,
                                      searches.np_delta, spec, config)
            grad_theta += w.w_unfair * g_shift.theta
        _check_finite(step, "θ gradient", grad_theta)
        model, searches = _theta_step(model, delta, grad_theta, batches, spec, config,
                                      breakdown.total, searches, record_last)

        grad_delta = w.w_delta * spec.grad(delta)[0]
        if w.w_unfair > 0:
            g_shift = _mean_hypergrad(model, batches.np_neg, batches.np_neg + delta,
                                      searches.np_delta, spec, config)
            grad_delta = grad_delta + w.w_unfair * g_shift.anchor
        _check_finite(step, "δ gradient", grad_delta)

        trace.append(StepRecord(
            step=step,
            fairness=breakdown.fairness,
            unfairness=breakdown.unfairness,
            perturbation=breakdown.perturbation,
            accuracy=breakdown.accuracy,
            total=breakdown.total,
            c_pr=breakdown.c_pr,
            c_np=breakdown.c_np,
            c_np_delta=breakdown.c_np_delta,
            unconverged=breakdown.unconverged,
            delta_norm=float(np.linalg.norm(delta)),
        ))
        delta = _delta_step(model, delta, grad_delta, np_rows, spec, config)

        if (step + 1) % config.log_every == 0 or step + 1 == config.outer_steps:
            logger.info(
                "attack step %d/%d: total %.4f (fair %.4f, unfair %.4f, "
                "delta %.4f, acc %.4f), %d unconverged searches",
                step + 1, config.outer_steps, breakdown.total, breakdown.fairness,
                breakdown.unfairness, breakdown.perturbation, breakdown.accuracy,
                breakdown.unconverged,
            )

    return RecourseAttackModel(model, delta, tuple(trace))


def train_baseline(
    dataset: TabularDataset,
    masks: GroupMasks,
    config: AttackConfig = AttackConfig(),
    hidden: Sequence[int] = (16,),
    activation: str = "tanh",
) -> MlpModel:
    """Model trained on w_acc · L only with the same seed and schedule."""
    w_acc = config.weights.w_acc or 1.0
    accuracy_only = replace(config, weights=AttackWeights(0.0, 0.0, 0.0, w_acc))
    return train_attack(dataset, masks, accuracy_only, hidden, activation).model
