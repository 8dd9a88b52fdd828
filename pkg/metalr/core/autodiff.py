# metalr/core/autodiff.py
"""
One-shot reverse-mode differentiation over a Network's layer stack.

forward() records one cache per layer; backward() consumes it once, walking the
stack in reverse. There is no persistent graph: a cache is only valid for the
exact Network value it came from (checked through `Network.version`).
"""
import logging
from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from metalr.core.errors import LabelRangeError, NonFiniteError, ShapeMismatchError, StaleCacheError
from metalr.models.schemas import LossKind

if TYPE_CHECKING:
    from metalr.db.datasets import Batch
    from metalr.models.networks import Network

logger = logging.getLogger(__name__)

GradientTree = Dict[str, Dict[str, np.ndarray]]

_pass_counter: ContextVar[Optional[Counter]] = ContextVar("metalr_pass_counter", default=None)


@contextmanager
def count_passes() -> Iterator[Counter]:
    """Count forward/backward passes made in the current context.

    >>> with count_passes() as passes:
    ...     meta_iteration(...)
    >>> passes["forward"], passes["backward"]
    """
    counter: Counter = Counter()
    token = _pass_counter.set(counter)
    try:
        yield counter
    finally:
        _pass_counter.reset(token)


def _record(kind: str) -> None:
    counter = _pass_counter.get()
    if counter is not None:
        counter[kind] += 1


@dataclass(frozen=True)
class ForwardCache:
    version: int
    layer_caches: Tuple[Any, ...]
    predictions: np.ndarray


@dataclass(frozen=True)
class GradientSnapshot:
    """Per-layer gradients of a batch-mean loss, keyed like Network.parameters()."""
    grads: GradientTree
    batch_size: int
    loss: float = field(default=float("nan"))

    def layer_names(self) -> List[str]:
        return list(self.grads)

    def __getitem__(self, name: str) -> Dict[str, np.ndarray]:
        return self.grads[name]

    def flat(self, name: str) -> np.ndarray:
        tensors = self.grads[name]
        return np.concatenate([tensors[key].ravel() for key in sorted(tensors)])


def _run_layers(model: "Network", inputs: np.ndarray) -> Tuple[np.ndarray, List[Any]]:
    x = np.asarray(inputs, dtype=np.float64)
    # ReLU maps NaN to 0, so non-finite inputs would not surface in the predictions.
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"Non-finite inputs to model with layers {model.layer_labels}")
    caches = []
    for layer in model.layers:
        layer.check_input(x)
        x, cache = layer.forward(x, model.params_for(layer.label))
        caches.append(cache)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"Non-finite predictions from model with layers {model.layer_labels}")
    return x, caches


def forward(model: "Network", inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Predictions plus the cache needed by exactly one backward()."""
    predictions, caches = _run_layers(model, inputs)
    _record("forward")
    return predictions, ForwardCache(model.version, tuple(caches), predictions)


def predict(model: "Network", inputs: np.ndarray) -> np.ndarray:
    """Forward pass for evaluation; not counted and keeps no cache."""
    predictions, _ = _run_layers(model, inputs)
    return predictions


def _class_indices(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    if predictions.ndim != 2:
        raise ShapeMismatchError("loss", ("batch", "classes"), predictions.shape)
    labels = np.asarray(labels)
    if labels.shape != (predictions.shape[0],):
        raise ShapeMismatchError("loss", (predictions.shape[0],), labels.shape)
    num_classes = predictions.shape[1]
    as_int = labels.astype(np.int64)
    if not np.array_equal(as_int, labels) or as_int.min(initial=0) < 0 or as_int.max(initial=0) >= num_classes:
        raise LabelRangeError(f"Labels must be integers in [0, {num_classes}), got range "
                              f"[{labels.min()}, {labels.max()}]")
    return as_int


def _regression_targets(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    targets = np.asarray(labels, dtype=np.float64)
    if predictions.ndim == 2 and predictions.shape[1] == 1 and targets.shape == predictions.shape[:1]:
        targets = targets[:, None]
    if targets.shape != predictions.shape:
        raise ShapeMismatchError("loss", predictions.shape, targets.shape)
    return targets


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def compute_loss(predictions: np.ndarray, labels: np.ndarray, kind: LossKind) -> float:
    """Batch-mean loss. Cross-entropy takes class indices, MSE takes targets shaped like the predictions."""
    predictions = np.asarray(predictions, dtype=np.float64)
    if kind == LossKind.CROSS_ENTROPY:
        classes = _class_indices(predictions, labels)
        log_probs = _log_softmax(predictions)
        return float(-log_probs[np.arange(len(classes)), classes].mean())
    targets = _regression_targets(predictions, labels)
    return float(np.mean((predictions - targets) ** 2))


def _loss_gradient(predictions: np.ndarray, labels: np.ndarray, kind: LossKind) -> np.ndarray:
    if kind == LossKind.CROSS_ENTROPY:
        classes = _class_indices(predictions, labels)
        probs = np.exp(_log_softmax(predictions))
        probs[np.arange(len(classes)), classes] -= 1.0
        return probs / len(classes)
    targets = _regression_targets(predictions, labels)
    return 2.0 * (predictions - targets) / predictions.size


def backward(model: "Network", cache: ForwardCache, labels: np.ndarray, kind: LossKind) -> GradientSnapshot:
    if cache.version != model.version:
        raise StaleCacheError(
            f"Cache was recorded for model version {cache.version}, model is at version {model.version}"
        )
    predictions = cache.predictions
    dout = _loss_gradient(predictions, labels, kind)
    grads: GradientTree = {}
    for layer, layer_cache in zip(reversed(model.layers), reversed(cache.layer_caches)):
        dout, layer_grads = layer.backward(dout, layer_cache, model.params_for(layer.label))
        if layer.param_shapes:
            grads[layer.label] = layer_grads
    for name, tensors in grads.items():
        for key, value in tensors.items():
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(f"Non-finite gradient for {name}.{key}")
    _record("backward")
    ordered = {name: grads[name] for name in model.group_names()}
    return GradientSnapshot(ordered, batch_size=int(predictions.shape[0]))


def loss_and_gradients(model: "Network", batch: "Batch", kind: LossKind) -> GradientSnapshot:
    """One forward/backward pair on a batch; the snapshot carries the batch loss."""
    predictions, cache = forward(model, batch.inputs)
    loss = compute_loss(predictions, batch.labels, kind)
    snapshot = backward(model, cache, batch.labels, kind)
    return GradientSnapshot(snapshot.grads, snapshot.batch_size, loss)


def finite_difference_gradient(model: "Network", batch: "Batch", kind: LossKind,
                               epsilon: float = 1e-5) -> GradientSnapshot:
    """Central differences (L(θ+ε) − L(θ−ε)) / 2ε for every scalar parameter."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    def loss_with(name: str, key: str, value: np.ndarray) -> float:
        perturbed = model.with_parameters({name: {key: value}})
        return compute_loss(predict(perturbed, batch.inputs), batch.labels, kind)

    grads: GradientTree = {}
    for name, tensors in model.parameters().items():
        grads[name] = {}
        for key, value in tensors.items():
            estimate = np.zeros_like(value)
            for index in np.ndindex(value.shape):
                shifted = value.copy()
                shifted[index] = value[index] + epsilon
                upper = loss_with(name, key, shifted)
                shifted[index] = value[index] - epsilon
                lower = loss_with(name, key, shifted)
                estimate[index] = (upper - lower) / (2.0 * epsilon)
            grads[name][key] = estimate
    return GradientSnapshot(grads, batch_size=len(batch.labels))


def gradient_check_error(analytic: GradientSnapshot, numeric: GradientSnapshot) -> float:
    """Largest per-tensor max|a − b| / (max|b| + 1e-8) across both snapshots."""
    worst = 0.0
    for name, tensors in numeric.grads.items():
        for key, reference in tensors.items():
            diff = np.max(np.abs(analytic[name][key] - reference))
            worst = max(worst, float(diff / (np.max(np.abs(reference)) + 1e-8)))
    return worst


def max_relative_error(analytic: GradientSnapshot, numeric: GradientSnapshot, floor: float = 1e-8) -> float:
    """Largest elementwise |a − b| / (|b| + floor) over every parameter."""
    worst = 0.0
    for name, tensors in numeric.grads.items():
        for key, reference in tensors.items():
            ratio = np.abs(analytic[name][key] - reference) / (np.abs(reference) + floor)
            worst = max(worst, float(ratio.max(initial=0.0)))
    return worst
