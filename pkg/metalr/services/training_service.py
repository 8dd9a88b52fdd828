import logging
import time
from dataclasses import dataclass, field
from typing import Collection, Dict, Mapping, Optional, Tuple

import numpy as np

from metalr.core.autodiff import compute_loss, count_passes, loss_and_gradients, predict
from metalr.core.errors import DivergenceError, NonFiniteError, StreamError
from metalr.core.meta_optimizer import clamp, meta_iteration, select_validation_batch, sgd_step
from metalr.db.datasets import BatchStream, Dataset
from metalr.db.tasks import TransferTask
from metalr.models.networks import Network
from metalr.models.schemas import (
    LearningRates,
    LossKind,
    LRTrace,
    MetaLRScheme,
    RunMetrics,
    SplitMetrics,
    TrainConfig,
    ValidationMode,
)

logger = logging.getLogger(__name__)

# Stream salts keep the data orders of different phases independent.
FINETUNE_SALT = 0
PRETRAIN_SALT = 1
VALIDATION_SALT = 3


@dataclass
class TrainResult:
    model: Network
    metrics: Optional[RunMetrics]
    wall_clock_s: float
    passes: Dict[str, int] = field(default_factory=dict)
    trace: Optional[LRTrace] = None
    frozen: Tuple[str, ...] = ()


def evaluate(model: Network, dataset: Dataset, kind: LossKind = LossKind.CROSS_ENTROPY) -> SplitMetrics:
    predictions = predict(model, dataset.inputs)
    loss = compute_loss(predictions, dataset.labels, kind)
    accuracy = None
    if kind == LossKind.CROSS_ENTROPY:
        accuracy = float(np.mean(predictions.argmax(axis=1) == dataset.labels))
    return SplitMetrics(loss=loss, accuracy=accuracy)


def evaluate_task(model: Network, task: TransferTask, kind: LossKind = LossKind.CROSS_ENTROPY) -> RunMetrics:
    return RunMetrics(
        train=evaluate(model, task.target_train, kind),
        val=evaluate(model, task.target_val, kind),
        test=evaluate(model, task.target_test, kind),
    )


def training_pool(task: TransferTask, reserve_validation: bool) -> Dataset:
    return task.target_train if reserve_validation else task.target_pool


def _checked_gradients(model: Network, batch, kind: LossKind, iteration: int):
    try:
        snapshot = loss_and_gradients(model, batch, kind)
    except NonFiniteError as e:
        raise DivergenceError(iteration, str(e)) from e
    if not np.isfinite(snapshot.loss):
        raise DivergenceError(iteration, f"training loss {snapshot.loss}")
    return snapshot


def fit_sgd(
    model: Network,
    dataset: Dataset,
    rates: Mapping[str, float],
    config: TrainConfig,
    frozen: Collection[str] = (),
    salt: int = FINETUNE_SALT,
) -> TrainResult:
    """Plain minibatch SGD with fixed per-layer rates; groups in `frozen` never move."""
    stream = BatchStream(dataset, config.batch_size, config.seed, salt)
    with count_passes() as passes:
        start = time.perf_counter()
        for t in range(config.iterations):
            batch = stream.next_batch()
            snapshot = _checked_gradients(model, batch, config.loss, t)
            model = model.with_parameters(sgd_step(model.parameters(), rates, snapshot, frozen))
            if (t + 1) % config.log_every == 0:
                logger.debug(f"sgd iteration {t + 1}/{config.iterations} on {dataset.name}: loss={snapshot.loss:.6f}")
        elapsed = time.perf_counter() - start
    return TrainResult(model=model, metrics=None, wall_clock_s=elapsed, passes=dict(passes), frozen=tuple(frozen))


def train(model: Network, task: TransferTask, config: TrainConfig,
          scheme: Optional[MetaLRScheme] = None) -> TrainResult:
    """
    MetaLR fine-tuning for `config.iterations` meta iterations on the task's target data.

    SEPARATE_SET trains on target_train and validates on target_val; HELD_OUT_TRAINING_BATCH
    trains on the whole target pool and validates on the next training batch.
    """
    scheme = scheme or MetaLRScheme()
    n = config.batch_size
    lrs = clamp(LearningRates.uniform(model.group_names(), scheme.alpha0, scheme.lo, scheme.hi))

    if scheme.validation == ValidationMode.SEPARATE_SET:
        train_stream = BatchStream(task.target_train, n, config.seed, FINETUNE_SALT)
        val_stream = BatchStream(task.target_val, n, config.seed, VALIDATION_SALT)
    else:
        pool = task.target_pool
        if len(pool) < 2 * n:
            raise StreamError(f"held-out training batches need at least {2 * n} samples, pool has {len(pool)}")
        train_stream = BatchStream(pool, n, config.seed, FINETUNE_SALT)
        val_stream = None

    logger.info(
        f"MetaLR fine-tuning: T={config.iterations}, n={n}, alpha0={scheme.alpha0}, "
        f"policy={scheme.policy.kind}, validation={scheme.validation.value}, seed={config.seed}"
    )
    trace = LRTrace()
    with count_passes() as passes:
        start = time.perf_counter()
        for t in range(config.iterations):
            train_batch = train_stream.next_batch()
            val_batch = select_validation_batch(scheme.validation, val_stream, train_stream)
            try:
                step = meta_iteration(model, train_batch, val_batch, lrs, scheme.policy, config.loss)
            except NonFiniteError as e:
                logger.error(f"MetaLR diverged at iteration {t}: {e}")
                raise DivergenceError(t, str(e)) from e
            if not np.isfinite(step.report.train_loss):
                raise DivergenceError(t, f"training loss {step.report.train_loss}")
            model, lrs = step.model, step.lrs
            trace.append(step.report)
            if (t + 1) % config.log_every == 0:
                rates = ", ".join(f"{name}={value:.3e}" for name, value in lrs.alpha.items())
                logger.debug(f"meta iteration {t + 1}/{config.iterations}: "
                             f"train={step.report.train_loss:.5f} val={step.report.val_loss:.5f} [{rates}]")
        elapsed = time.perf_counter() - start

    metrics = evaluate_task(model, task, config.loss)
    logger.info(f"MetaLR finished in {elapsed:.2f}s: test accuracy={metrics.test.accuracy}")
    return TrainResult(model=model, metrics=metrics, wall_clock_s=elapsed, passes=dict(passes), trace=trace)
