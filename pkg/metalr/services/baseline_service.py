import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

from metalr.core.errors import SpecError
from metalr.db.tasks import TransferTask
from metalr.models.networks import Network
from metalr.models.schemas import LR_CEILING, LR_FLOOR, LearningRates, SweepResult, SweepRow, TrainConfig
from metalr.services.training_service import TrainResult, evaluate_task, fit_sgd, training_pool

logger = logging.getLogger(__name__)


def _check_alpha(alpha: float) -> None:
    if not LR_FLOOR <= alpha <= LR_CEILING:
        raise ValueError(f"baseline learning rate {alpha} outside [{LR_FLOOR}, {LR_CEILING}]")


def finetune_frozen_prefix(model: Network, task: TransferTask, k: int, alpha: float, config: TrainConfig,
                           reserve_validation: bool = False) -> TrainResult:
    """SGD at a constant alpha with the first k ParameterGroups frozen."""
    names = model.group_names()
    if not 0 <= k < len(names):
        raise SpecError(f"frozen prefix k={k} outside [0, {len(names)})")
    _check_alpha(alpha)
    frozen = names[:k]
    pool = training_pool(task, reserve_validation)
    rates = LearningRates.uniform(names, alpha).alpha
    logger.info(f"Fine-tuning {names[k:]} at alpha={alpha} (frozen: {frozen or 'none'}) on {len(pool)} samples")
    result = fit_sgd(model, pool, rates, config, frozen=frozen)
    result.metrics = evaluate_task(result.model, task, config.loss)
    return result


def finetune_constant(model: Network, task: TransferTask, alpha: float, config: TrainConfig,
                      reserve_validation: bool = False) -> TrainResult:
    """All layers, one constant alpha."""
    return finetune_frozen_prefix(model, task, 0, alpha, config, reserve_validation)


def finetune_last_layer(model: Network, task: TransferTask, alpha: float, config: TrainConfig,
                        reserve_validation: bool = False) -> TrainResult:
    return finetune_frozen_prefix(model, task, model.depth - 1, alpha, config, reserve_validation)


def _selection_score(row: SweepRow) -> Tuple[float, int]:
    val = row.metrics.val
    score = val.accuracy if val.accuracy is not None else -val.loss
    return score, row.k


def layerwise_sweep(model: Network, task: TransferTask, alpha: float, config: TrainConfig,
                    cut_points: Optional[Sequence[int]] = None,
                    workers: int = 1) -> Tuple[SweepResult, TrainResult]:
    """
    finetune_frozen_prefix for every k, selected on the held-out validation split.
    Ties go to the larger k. All runs share the seed, so they see the same data order.
    """
    ks: List[int] = list(range(model.depth)) if cut_points is None else sorted(set(cut_points))
    for k in ks:
        if not 0 <= k < model.depth:
            raise SpecError(f"cut point k={k} outside [0, {model.depth})")

    def run_k(k: int) -> TrainResult:
        return finetune_frozen_prefix(model, task, k, alpha, config, reserve_validation=True)

    start = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_k, ks))
    else:
        results = [run_k(k) for k in ks]
    total = time.perf_counter() - start

    rows = [
        SweepRow(k=k, frozen=list(result.frozen), metrics=result.metrics, wall_clock_s=result.wall_clock_s)
        for k, result in zip(ks, results)
    ]
    best = max(rows, key=_selection_score)
    logger.info(f"Layer-wise sweep over k={ks}: best k={best.k} "
                f"(val accuracy {best.metrics.val.accuracy}), total {total:.2f}s")
    return SweepResult(rows=rows, best_k=best.k, total_wall_clock_s=total), results[ks.index(best.k)]
