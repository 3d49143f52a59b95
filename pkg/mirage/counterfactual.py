# -*- coding: utf-8 -*-
"""
Hill-climbing counterfactual search.

All searches minimize G(x, x_cf) = λ (f(x_cf) - 1)² + d(x, x_cf) by plain
gradient descent from x_cf = x, with a backtracking step that halves the
learning rate up to 20 times so G never increases within a λ round. When a
round ends below the target probability λ is multiplied by the growth
factor and descent resumes from the current iterate.
"""
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import ClassVar, Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, NoPositiveRows
from .mlp import MlpModel, mlp_grad_input_batch
from .tabular import TabularDataset

logger = logging.getLogger(__name__)

MAX_WORKERS = 8
CHUNK_SIZE = 64
MAX_HALVINGS = 20
DICE_JITTER = 1e-6

L1_MAD = "l1_mad"
L2 = "l2"
ELASTIC_NET = "elastic_net"
DISTANCES = (L1_MAD, L2, ELASTIC_NET)


@dataclass(frozen=True)
class DistanceSpec:
    """
    Recourse distance d(x, x_cf).

    Attributes:
        kind: l1_mad, l2 (squared Euclidean) or elastic_net.
        mad: Per-column scale of the L1 term of l1_mad.
        beta: Weight of the L1 term of elastic_net.
    """
    kind: str = L2
    mad: Optional[np.ndarray] = None
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in DISTANCES:
            raise ValueError(f"unknown distance '{self.kind}'")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.kind == L1_MAD:
            if self.mad is None:
                raise ValueError("l1_mad needs per-column MAD values")
            mad = np.asarray(self.mad, dtype=float)
            if not np.all(mad > 0):
                raise ValueError("MAD values must be > 0")
            object.__setattr__(self, "mad", mad)

    @classmethod
    def l1_mad(cls, mad: np.ndarray) -> "DistanceSpec":
        return cls(L1_MAD, mad=mad)

    @classmethod
    def l2(cls) -> "DistanceSpec":
        return cls(L2)

    @classmethod
    def elastic_net(cls, beta: float) -> "DistanceSpec":
        return cls(ELASTIC_NET, beta=beta)

    def _check(self, diff: np.ndarray):
        if self.kind == L1_MAD and diff.shape[-1] != len(self.mad):
            raise DimensionMismatch(
                f"{diff.shape[-1]} columns, MAD has {len(self.mad)} entries"
            )

    def value(self, diff: np.ndarray) -> np.ndarray:
        """Distance of each row of `x_cf - x`."""
        diff = np.atleast_2d(diff)
        self._check(diff)
        if self.kind == L1_MAD:
            return np.sum(np.abs(diff) / self.mad, axis=1)
        squared = np.sum(diff ** 2, axis=1)
        if self.kind == L2:
            return squared
        return self.beta * np.sum(np.abs(diff), axis=1) + squared

    def grad(self, diff: np.ndarray) -> np.ndarray:
        """Gradient in x_cf; L1 terms use sign(·), which is 0 at 0."""
        diff = np.atleast_2d(diff)
        self._check(diff)
        if self.kind == L1_MAD:
            return np.sign(diff) / self.mad
        if self.kind == L2:
            return 2.0 * diff
        return self.beta * np.sign(diff) + 2.0 * diff

    def hvp(self, diff: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Hessian-vector product in x_cf; L1 terms are piecewise linear."""
        if self.kind == L1_MAD:
            return np.zeros_like(np.atleast_2d(v), dtype=float)
        return 2.0 * np.atleast_2d(v)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == ELASTIC_NET:
            out["beta"] = self.beta
        return out


@dataclass(frozen=True)
class CfConfig:
    """
    Search schedule.

    Attributes:
        lambda_init: λ of the first round.
        lambda_growth: Factor applied to λ after a failed round.
        max_lambda_rounds: Number of λ rounds at most.
        inner_steps: Descent steps per round at most.
        learning_rate: Initial step of every backtracking line search.
        target_threshold: Probability a counterfactual must reach.
        tolerance: A round ends early once a step moves no coordinate
            by this much.
        seed: Seed of the DiCE candidate jitter.
    """
    lambda_init: float = 0.1
    lambda_growth: float = 10.0
    max_lambda_rounds: int = 10
    inner_steps: int = 1000
    learning_rate: float = 0.01
    target_threshold: float = 0.5
    tolerance: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.lambda_init <= 0 or self.learning_rate <= 0 or self.tolerance <= 0:
            raise ValueError("lambda_init, learning_rate and tolerance must be > 0")
        if self.lambda_growth <= 1:
            raise ValueError("lambda_growth must be > 1")
        if self.max_lambda_rounds < 1 or self.inner_steps < 1:
            raise ValueError("max_lambda_rounds and inner_steps must be >= 1")
        if not 0 < self.target_threshold < 1:
            raise ValueError("target_threshold must be in (0, 1)")


@dataclass(frozen=True)
class RoundRecord:
    """State at the end of one λ round."""
    lam: float
    cost: float
    prob: float


@dataclass(frozen=True)
class CounterfactualResult:
    """
    Outcome of one search.

    Attributes:
        x_cf: Counterfactual point (best iterate when not converged).
        cost: d(search instance, x_cf) under the search distance.
        model_prob: f(x_cf).
        converged: model_prob reached the target threshold.
        rounds_used: λ rounds run; 0 when the instance was already positive.
        trace: Per-round λ, cost and probability.
        final_lambda: λ of the last round run.
        trajectory: Last recorded descent steps of the final round as
            (iterate, step size) pairs.
    """
    x_cf: np.ndarray
    cost: float
    model_prob: float
    converged: bool
    rounds_used: int
    trace: tuple[RoundRecord, ...] = ()
    final_lambda: float = 0.0
    trajectory: tuple[tuple[np.ndarray, float], ...] = field(
        default=(), repr=False
    )

    def to_dict(self, algorithm: str, x: np.ndarray) -> dict:
        return {
            "algorithm": algorithm,
            "x": np.asarray(x, dtype=float).tolist(),
            "x_cf": self.x_cf.tolist(),
            "cost": self.cost,
            "model_prob": self.model_prob,
            "converged": self.converged,
            "rounds_used": self.rounds_used,
        }


@dataclass(frozen=True)
class Wachter:
    """Plain search under the configured distance."""
    name: ClassVar[str] = "wachter"


@dataclass(frozen=True)
class SparseWachter:
    """Search under an elastic-net distance with L1 weight `beta`."""
    beta: float = 0.1
    name: ClassVar[str] = "sparse_wachter"


@dataclass(frozen=True)
class Prototype:
    """Search pulled toward a positive-class prototype."""
    proto_weight: float
    prototype: np.ndarray
    name: ClassVar[str] = "prototype"

    @classmethod
    def from_dataset(
        cls, dataset: TabularDataset, proto_weight: float = 0.1
    ) -> "Prototype":
        """Prototype at the mean of the positive rows (model space)."""
        positive = dataset.features[dataset.labels == 1]
        if len(positive) == 0:
            raise NoPositiveRows("dataset has no positive rows")
        return cls(proto_weight, positive.mean(axis=0))


@dataclass(frozen=True)
class Dice:
    """Joint search of `count` diverse counterfactuals."""
    count: int = 4
    diversity_weight: float = 1.0
    name: ClassVar[str] = "dice"


Algorithm = Union[Wachter, SparseWachter, Prototype, Dice]


def search_distance(spec: DistanceSpec, algorithm: Algorithm) -> DistanceSpec:
    """Distance minimized by an algorithm's search."""
    if isinstance(algorithm, SparseWachter):
        return DistanceSpec.elastic_net(algorithm.beta)
    return spec


def _check_pair(x: np.ndarray, x_cf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    x_cf = np.asarray(x_cf, dtype=float)
    if x.shape != x_cf.shape or x.ndim != 1:
        raise DimensionMismatch(f"instance {x.shape} vs counterfactual {x_cf.shape}")
    return x, x_cf


def distance(spec: DistanceSpec, x: np.ndarray, x_cf: np.ndarray) -> float:
    """d(x, x_cf) for one pair."""
    x, x_cf = _check_pair(x, x_cf)
    return float(spec.value(x_cf - x)[0])


def _proto_terms(prototype: Optional[Prototype]):
    if prototype is None:
        return 0.0, None
    return prototype.proto_weight, np.asarray(prototype.prototype, dtype=float)


def _objective(model, spec, lam, anchors, X, prototype=None):
    prob = model.predict_proba(X)
    G = lam * (prob - 1.0) ** 2 + spec.value(X - anchors)
    weight, center = _proto_terms(prototype)
    if center is not None:
        G = G + weight * np.sum((X - center) ** 2, axis=1)
    return G, prob


def _gradient(model, spec, lam, anchors, X, prototype=None):
    prob = model.predict_proba(X)
    scale = np.asarray(lam * 2.0 * (prob - 1.0)).reshape(-1, 1)
    grad = scale * mlp_grad_input_batch(model, X) + spec.grad(X - anchors)
    weight, center = _proto_terms(prototype)
    if center is not None:
        grad = grad + 2.0 * weight * (X - center)
    return grad


def objective_G(
    model: MlpModel,
    spec: DistanceSpec,
    lam: float,
    x: np.ndarray,
    x_cf: np.ndarray,
    prototype: Optional[Prototype] = None,
) -> float:
    """λ (f(x_cf) - 1)² + d(x, x_cf), plus the prototype pull if given."""
    x, x_cf = _check_pair(x, x_cf)
    return float(_objective(model, spec, lam, x[None], x_cf[None], prototype)[0][0])


def objective_grad(
    model: MlpModel,
    spec: DistanceSpec,
    lam: float,
    x: np.ndarray,
    x_cf: np.ndarray,
    prototype: Optional[Prototype] = None,
) -> np.ndarray:
    """∇ of `objective_G` in x_cf."""
    x, x_cf = _check_pair(x, x_cf)
    return _gradient(model, spec, lam, x[None], x_cf[None], prototype)[0]


def _search(
    model: MlpModel,
    anchors: np.ndarray,
    spec: DistanceSpec,
    config: CfConfig,
    prototype: Optional[Prototype],
    record_last: int,
) -> list[CounterfactualResult]:
    """Lockstep descent of independent searches with per-row line search."""
    n = len(anchors)
    x_cf = anchors.copy()
    prob = model.predict_proba(x_cf)
    converged = prob >= config.target_threshold
    pending = ~converged
    lam = np.full(n, float(config.lambda_init))
    last_lam = lam.copy()
    rounds = np.zeros(n, dtype=np.int64)
    traces: list[list[RoundRecord]] = [[] for _ in range(n)]
    steps: list[deque] = [deque(maxlen=max(record_last, 0)) for _ in range(n)]
    best, best_prob = x_cf.copy(), prob.copy()

    for round_index in range(config.max_lambda_rounds):
        active = np.flatnonzero(pending)
        if len(active) == 0:
            break
        rounds[active] += 1
        last_lam[active] = lam[active]
        for k in active:
            steps[k].clear()

        moving = active
        for _ in range(config.inner_steps):
            if len(moving) == 0:
                break
            X, A, L = x_cf[moving], anchors[moving], lam[moving]
            G_old, _ = _objective(model, spec, L, A, X, prototype)
            grad = _gradient(model, spec, L, A, X, prototype)
            eta = np.full(len(moving), float(config.learning_rate))
            candidate = X.copy()
            accepted = np.zeros(len(moving), dtype=bool)
            todo = np.arange(len(moving))
            for _ in range(MAX_HALVINGS + 1):
                trial = X[todo] - eta[todo, None] * grad[todo]
                G_new, _ = _objective(model, spec, L[todo], A[todo], trial, prototype)
                ok = G_new <= G_old[todo]
                candidate[todo[ok]] = trial[ok]
                accepted[todo[ok]] = True
                todo = todo[~ok]
                if len(todo) == 0:
                    break
                eta[todo] *= 0.5
            if record_last > 0:
                for i in np.flatnonzero(accepted):
                    steps[moving[i]].append((X[i].copy(), float(eta[i])))
            change = np.max(np.abs(candidate - X), axis=1)
            x_cf[moving] = candidate
            moving = moving[accepted & (change >= config.tolerance)]

        prob_active = model.predict_proba(x_cf[active])
        cost_active = spec.value(x_cf[active] - anchors[active])
        for i, k in enumerate(active):
            traces[k].append(
                RoundRecord(float(lam[k]), float(cost_active[i]), float(prob_active[i]))
            )
            if prob_active[i] > best_prob[k]:
                best[k], best_prob[k] = x_cf[k], prob_active[i]
        done = prob_active >= config.target_threshold
        converged[active[done]] = True
        pending[active[done]] = False
        lam[active[~done]] *= config.lambda_growth
        logger.debug(
            "round %d: %d/%d searches reached the target",
            round_index + 1, int(done.sum()), len(active),
        )

    final = np.where(converged[:, None], x_cf, best)
    final_prob = model.predict_proba(final)
    cost = spec.value(final - anchors)
    if pending.any():
        logger.warning(
            "%d of %d counterfactual searches did not converge",
            int(pending.sum()), n,
        )
    return [
        CounterfactualResult(
            x_cf=final[k].copy(),
            cost=float(cost[k]),
            model_prob=float(final_prob[k]),
            converged=bool(converged[k]),
            rounds_used=int(rounds[k]),
            trace=tuple(traces[k]),
            final_lambda=float(last_lam[k]),
            trajectory=tuple(steps[k]),
        )
        for k in range(n)
    ]


def search_batch(
    model: MlpModel,
    X: np.ndarray,
    spec: DistanceSpec,
    config: CfConfig,
    algorithm: Algorithm = Wachter(),
    record_last: int = 0,
) -> list[CounterfactualResult]:
    """
    Search counterfactuals for every row of X, in parallel chunks.

    Args:
        model: Differentiable model.
        X: (n, d) instances; each search starts at and is anchored to its row.
        spec: Distance of the search (SparseWachter substitutes its own).
        config: Search schedule.
        algorithm: Wachter, SparseWachter or Prototype.
        record_last: Number of final descent steps kept per result.

    Returns:
        list[CounterfactualResult]: One result per row, in row order.
    """
    if isinstance(algorithm, Dice):
        raise ValueError("Dice searches go through find_diverse")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.input_size:
        raise DimensionMismatch(
            f"instances have {X.shape[1]} columns, model expects {model.input_size}"
        )
    search_spec = search_distance(spec, algorithm)
    prototype = algorithm if isinstance(algorithm, Prototype) else None
    chunks = [X[i:i + CHUNK_SIZE] for i in range(0, len(X), CHUNK_SIZE)]

    def run(chunk: np.ndarray) -> list[CounterfactualResult]:
        return _search(model, chunk, search_spec, config, prototype, record_last)

    if len(chunks) == 1:
        return run(chunks[0])
    with ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
        return [r for part in executor.map(run, chunks) for r in part]


def find_counterfactual(
    model: MlpModel,
    x: np.ndarray,
    spec: DistanceSpec,
    config: CfConfig = CfConfig(),
    algorithm: Algorithm = Wachter(),
    record_last: int = 0,
) -> CounterfactualResult:
    """
    Counterfactual of one instance.

    An instance already at or above the target is returned unchanged with
    cost 0. A search that never reaches the target comes back with
    converged=False and its most positive round-end iterate.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected one instance, got shape {x.shape}")
    return search_batch(model, x[None], spec, config, algorithm, record_last)[0]


def _pairwise(spec: DistanceSpec, C: np.ndarray) -> np.ndarray:
    m = len(C)
    D = np.zeros((m, m))
    for i in range(m):
        D[i] = spec.value(C - C[i])
    return D


def _kernel(spec: DistanceSpec, C: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + _pairwise(spec, C)) + DICE_JITTER * np.eye(len(C))


def _diversity(spec: DistanceSpec, C: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(_kernel(spec, C))
    return logdet if sign > 0 else -np.inf


def _diversity_grad(spec: DistanceSpec, C: np.ndarray) -> np.ndarray:
    m = len(C)
    D = _pairwise(spec, C)
    K_inv = np.linalg.inv(1.0 / (1.0 + D) + DICE_JITTER * np.eye(m))
    grad = np.zeros_like(C)
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            dK = -1.0 / (1.0 + D[i, j]) ** 2
            grad[i] += 2.0 * K_inv[i, j] * dK * spec.grad(C[i] - C[j])[0]
    return grad


def find_diverse(
    model: MlpModel,
    x: np.ndarray,
    spec: DistanceSpec,
    config: CfConfig,
    m: int,
    diversity_weight: float,
) -> list[CounterfactualResult]:
    """
    Jointly search m counterfactuals that are pushed apart.

    Minimizes Σ_i G(x, c_i) - diversity_weight · logdet(K) with
    K_ij = 1 / (1 + d(c_i, c_j)) + 1e-6 [i = j]. Candidate 0 starts at x,
    the others at x plus a 1e-3 seeded jitter. One step size and one λ are
    shared by all candidates; λ grows until every candidate is positive.

    Returns:
        list[CounterfactualResult]: Candidates sorted by ascending cost.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != model.input_size:
        raise DimensionMismatch(
            f"instance of shape {x.shape}, model expects ({model.input_size},)"
        )
    prob0 = float(model.predict_proba(x[None])[0])
    if prob0 >= config.target_threshold:
        same = CounterfactualResult(x.copy(), 0.0, prob0, True, 0, (),
                                    config.lambda_init)
        return [same] * m

    rng = np.random.default_rng(config.seed)
    anchors = np.repeat(x[None], m, axis=0)
    C = anchors.copy()
    C[1:] += 1e-3 * rng.standard_normal((m - 1, len(x)))
    diverse = m > 1 and diversity_weight != 0

    def joint(Y: np.ndarray, lam: float) -> float:
        G, _ = _objective(model, spec, lam, anchors, Y)
        total = float(np.sum(G))
        if diverse:
            total -= diversity_weight * _diversity(spec, Y)
        return total

    def joint_grad(Y: np.ndarray, lam: float) -> np.ndarray:
        grad = _gradient(model, spec, lam, anchors, Y)
        if diverse:
            grad = grad - diversity_weight * _diversity_grad(spec, Y)
        return grad

    lam = float(config.lambda_init)
    traces: list[list[RoundRecord]] = [[] for _ in range(m)]
    rounds = 0
    for _ in range(config.max_lambda_rounds):
        rounds += 1
        for _ in range(config.inner_steps):
            J_old = joint(C, lam)
            grad = joint_grad(C, lam)
            eta = float(config.learning_rate)
            trial = None
            for _ in range(MAX_HALVINGS + 1):
                candidate = C - eta * grad
                if joint(candidate, lam) <= J_old:
                    trial = candidate
                    break
                eta *= 0.5
            if trial is None:
                break
            change = np.max(np.abs(trial - C))
            C = trial
            if change < config.tolerance:
                break
        probs = model.predict_proba(C)
        costs = spec.value(C - anchors)
        for i in range(m):
            traces[i].append(RoundRecord(lam, float(costs[i]), float(probs[i])))
        if np.all(probs >= config.target_threshold):
            break
        lam *= config.lambda_growth
    else:
        lam /= config.lambda_growth

    probs = model.predict_proba(C)
    costs = spec.value(C - anchors)
    results = [
        CounterfactualResult(
            x_cf=C[i].copy(),
            cost=float(costs[i]),
            model_prob=float(probs[i]),
            converged=bool(probs[i] >= config.target_threshold),
            rounds_used=rounds,
            trace=tuple(traces[i]),
            final_lambda=lam,
        )
        for i in range(m)
    ]
    if not all(r.converged for r in results):
        logger.warning("DiCE search left %d of %d candidates below target",
                       sum(not r.converged for r in results), m)
    return sorted(results, key=lambda r: r.cost)


def run_algorithm(
    model: MlpModel,
    X: np.ndarray,
    spec: DistanceSpec,
    config: CfConfig,
    algorithm: Algorithm,
) -> list[list[CounterfactualResult]]:
    """Every row's candidate list; single-result algorithms give lists of one."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(algorithm, Dice):
        def run(x: np.ndarray) -> list[CounterfactualResult]:
            return find_diverse(model, x, spec, config, algorithm.count,
                                algorithm.diversity_weight)

        with ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
            return list(executor.map(run, X))
    return [[r] for r in search_batch(model, X, spec, config, algorithm)]


def recourse_cost(spec: DistanceSpec, x: np.ndarray, result: CounterfactualResult) -> float:
    """d(x, result.x_cf) measured from the original instance x."""
    return distance(spec, x, result.x_cf)


def recourse_costs(
    spec: DistanceSpec, X: np.ndarray, results: Sequence[CounterfactualResult]
) -> np.ndarray:
    """Row-wise `recourse_cost`."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) != len(results):
        raise DimensionMismatch(f"{len(X)} instances for {len(results)} results")
    if len(X) == 0:
        return np.zeros(0)
    return spec.value(np.array([r.x_cf for r in results]) - X)
