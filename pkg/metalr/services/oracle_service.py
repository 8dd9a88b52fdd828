# metalr/services/oracle_service.py
"""
Grid-search ground truth for the learning-rate schedule on tiny problems.

For every α vector on a grid, train the tiny model for T full-batch SGD steps and
record the validation loss; the argmin is the nested (bi-level) optimum the online
method is compared against. This is a test instrument, not a training path.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from metalr.core.autodiff import compute_loss, loss_and_gradients, predict
from metalr.core.errors import NonFiniteError, OracleGridError
from metalr.core.meta_optimizer import clamp, meta_iteration, sgd_step
from metalr.db.datasets import Batch
from metalr.models.networks import LayerSpec, ModelSpec, Network, build_mlp, build_network
from metalr.models.schemas import (
    HyperLRPolicy,
    LearningRates,
    LossKind,
    LRTrace,
    OracleResult,
    OracleSection,
    ProportionalHyperLR,
)

logger = logging.getLogger(__name__)

MAX_GRID_POINTS = 10 ** 4
MAX_ORACLE_DEPTH = 2


@dataclass(frozen=True)
class TinyProblem:
    name: str
    model: Network
    train: Batch
    val: Batch
    iterations: int
    kind: LossKind = LossKind.MSE


@dataclass(frozen=True)
class OracleSearch:
    layers: List[str]
    points: List[tuple]
    losses: List[float]
    best_alpha: Dict[str, float]
    best_val_loss: float


def _batch(inputs, targets) -> Batch:
    inputs = np.asarray(inputs, dtype=np.float64)
    return Batch(inputs=inputs, labels=np.asarray(targets, dtype=np.float64), indices=np.arange(len(inputs)))


def validation_loss_after(problem: TinyProblem, alpha: Mapping[str, float]) -> float:
    """Validation loss after `iterations` full-batch SGD steps at fixed rates; inf if training blows up."""
    model = problem.model
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            for _ in range(problem.iterations):
                snapshot = loss_and_gradients(model, problem.train, problem.kind)
                model = model.with_parameters(sgd_step(model.parameters(), alpha, snapshot))
            loss = compute_loss(predict(model, problem.val.inputs), problem.val.labels, problem.kind)
        except NonFiniteError:
            return float("inf")
    return loss if np.isfinite(loss) else float("inf")


def bilevel_oracle(problem: TinyProblem, alpha_grid: Sequence[float]) -> OracleSearch:
    grid = np.asarray(alpha_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0 or not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise OracleGridError("alpha grid must be a nonempty 1-D list of positive finite values")
    names = problem.model.group_names()
    if len(names) > MAX_ORACLE_DEPTH:
        raise OracleGridError(f"oracle handles at most {MAX_ORACLE_DEPTH} layers, problem has {len(names)}")
    total = grid.size ** len(names)
    if total > MAX_GRID_POINTS:
        raise OracleGridError(f"{total} grid points exceed the limit of {MAX_GRID_POINTS}")

    points = list(itertools.product(grid.tolist(), repeat=len(names)))
    losses = [validation_loss_after(problem, dict(zip(names, point))) for point in points]
    best = int(np.argmin(losses))
    if not np.isfinite(losses[best]):
        raise OracleGridError("inner training diverged at every grid point")
    logger.info(f"Oracle on '{problem.name}': {total} points, best alpha={points[best]}, loss={losses[best]:.6g}")
    return OracleSearch(
        layers=names,
        points=points,
        losses=losses,
        best_alpha=dict(zip(names, points[best])),
        best_val_loss=losses[best],
    )


def online_metalr(problem: TinyProblem, alpha0: float, policy: HyperLRPolicy) -> LRTrace:
    """MetaLR on the tiny problem: full-batch train and validation sets every iteration."""
    model = problem.model
    lrs = clamp(LearningRates.uniform(model.group_names(), alpha0))
    trace = LRTrace()
    for _ in range(problem.iterations):
        step = meta_iteration(model, problem.train, problem.val, lrs, policy, problem.kind)
        model, lrs = step.model, step.lrs
        trace.append(step.report)
    return trace


def reference_tiny_problem(seed: int = 0, iterations: int = 50) -> TinyProblem:
    """
    1 → 1 → 1 linear chain on x = ±5 with unbalanced weights w1 = 2, w2 ≈ 0.25 (seeded ±5%).

    The product step is κ = 50 (α1 w2² + α2 w1²), so fc2's rate dominates: α2 = 1e-2 puts κ
    at 2 and training stalls, α2 = 1e-4 underfits, and the best α2 lies inside the grid.
    Validation targets are shifted by 1e-4 so the best reachable validation loss is 2.5e-7, not 0.
    """
    rng = np.random.default_rng([seed, 11])
    w1, w2 = 2.0, 0.25 * (1.0 + 0.05 * rng.uniform(-1.0, 1.0))
    model = build_mlp(ModelSpec.mlp([1, 1, 1], seed=seed, activation="identity", bias=False))
    model = model.with_parameters({"fc1": {"weight": np.full((1, 1), w1)}, "fc2": {"weight": np.full((1, 1), w2)}})
    x = np.array([[5.0], [-5.0]])
    return TinyProblem("reference", model, _batch(x, x), _batch(x, (1.0 + 1e-4) * x), iterations)


def symmetric_tiny_problem(iterations: int = 50) -> TinyProblem:
    """1 → 1 → 1 scalar chain with both weights at 1 and targets 4x: swapping the layers changes nothing."""
    model = build_mlp(ModelSpec.mlp([1, 1, 1], activation="identity", bias=False))
    model = model.with_parameters({"fc1": {"weight": np.ones((1, 1))}, "fc2": {"weight": np.ones((1, 1))}})
    x = np.array([[1.0], [-1.0]])
    return TinyProblem("symmetric", model, _batch(x, 4.0 * x), _batch(x, 4.0 * x), iterations)


def convex_tiny_problem(iterations: int = 5) -> TinyProblem:
    """
    One scalar weight, x = ±10, targets 3x: L(w) = 100 (w − 3)², curvature 200,
    so the best fixed step is 1/200 = 5e-3.
    """
    spec = ModelSpec(input_shape=(1,), layers=[LayerSpec(kind="affine", units=1, bias=False)])
    model = build_network(spec).with_parameters({"fc1": {"weight": np.zeros((1, 1))}})
    x = np.array([[10.0], [-10.0]])
    return TinyProblem("convex", model, _batch(x, 3.0 * x), _batch(x, 3.0 * x), iterations)


def build_problem(section: OracleSection) -> TinyProblem:
    if section.problem == "symmetric":
        return symmetric_tiny_problem(section.iterations)
    if section.problem == "convex":
        return convex_tiny_problem(section.iterations)
    return reference_tiny_problem(section.seed, section.iterations)


def _json_loss(value: float) -> Optional[float]:
    return value if np.isfinite(value) else None


def run_oracle(section: OracleSection, policy: Optional[HyperLRPolicy] = None) -> OracleResult:
    """Grid oracle plus an online MetaLR run on the same problem, compared on validation loss."""
    if section.grid_low >= section.grid_high:
        raise OracleGridError(f"grid_low {section.grid_low} must be below grid_high {section.grid_high}")
    problem = build_problem(section)
    grid = np.geomspace(section.grid_low, section.grid_high, section.grid_points)
    search = bilevel_oracle(problem, grid)

    policy = policy or ProportionalHyperLR(beta=section.beta)
    trace = online_metalr(problem, section.alpha0, policy)
    metalr_alpha = trace.tail_alpha()
    names = problem.model.group_names()
    result = OracleResult(
        problem=problem.name,
        layers=names,
        grid=grid.tolist(),
        points=[list(point) for point in search.points],
        losses=[_json_loss(loss) for loss in search.losses],
        best_alpha=search.best_alpha,
        best_val_loss=search.best_val_loss,
        initial_val_loss=validation_loss_after(problem, {name: section.alpha0 for name in names}),
        metalr_alpha=metalr_alpha,
        metalr_val_loss=validation_loss_after(problem, metalr_alpha),
    )
    logger.info(
        f"Oracle '{problem.name}': grid best {result.best_val_loss:.6g} at {result.best_alpha}, "
        f"MetaLR {result.metalr_val_loss:.6g} at {metalr_alpha}"
    )
    return result
