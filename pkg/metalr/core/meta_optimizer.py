# metalr/core/meta_optimizer.py
"""
Online layer-wise learning-rate adaptation for SGD.

One meta iteration, given the current parameters θ and per-layer rates α:

    g        = ∇L_train(θ)                      forward/backward pair 1
    θ̂_j      = θ_j − α_j g_j                    lookahead
    g_v      = ∇L_val(θ̂)                        forward/backward pair 2
    h_j      = −⟨g_v_j, g_j⟩                    ∂L_val(θ̂)/∂α_j, since ∂θ̂_j/∂α_j = −g_j
    α'_j     = clamp(α_j − η h_j)  or  clamp(α_j (1 − β h_j))
    θ'_j     = θ_j − α'_j g_j                   reuses g; no third gradient

The hypergradient is exact for the one-step SGD lookahead, so no second-order
terms are needed.
"""
import logging
from dataclasses import dataclass
from typing import Collection, Dict, Mapping, Optional

import numpy as np

from metalr.core.autodiff import GradientSnapshot, loss_and_gradients
from metalr.core.errors import LayerSetMismatchError, NonFiniteError, ShapeMismatchError, StreamError
from metalr.models.networks import Network, ParameterTree
from metalr.models.schemas import (
    ConstantHyperLR,
    HyperLRPolicy,
    LearningRates,
    LossKind,
    MetaStepReport,
    ValidationMode,
)

logger = logging.getLogger(__name__)


def _require_layers(what: str, expected: Collection[str], actual: Collection[str]) -> None:
    if set(expected) != set(actual):
        raise LayerSetMismatchError(what, list(expected), list(actual))


def sgd_step(params: ParameterTree, alpha: Mapping[str, float], grads: GradientSnapshot,
             frozen: Collection[str] = ()) -> ParameterTree:
    """θ_j − α_j g_j for every non-frozen layer. Frozen layers are left out of the result."""
    _require_layers("learning rates", params, alpha)
    _require_layers("gradients", params, grads.layer_names())
    stepped: ParameterTree = {}
    for name, tensors in params.items():
        if name in frozen:
            continue
        rate = alpha[name]
        stepped[name] = {key: value - rate * grads[name][key] for key, value in tensors.items()}
    return stepped


def lookahead(params: ParameterTree, lrs: LearningRates, g_train: GradientSnapshot) -> ParameterTree:
    return sgd_step(params, lrs.alpha, g_train)


def hypergradient(g_train: GradientSnapshot, g_val_at_lookahead: GradientSnapshot) -> Dict[str, float]:
    _require_layers("hypergradient", g_train.layer_names(), g_val_at_lookahead.layer_names())
    h: Dict[str, float] = {}
    for name in g_train.layer_names():
        for key, value in g_train[name].items():
            other = g_val_at_lookahead[name].get(key)
            if other is None or other.shape != value.shape:
                raise ShapeMismatchError(f"{name}.{key}", value.shape, () if other is None else other.shape)
        h[name] = -float(np.dot(g_val_at_lookahead.flat(name), g_train.flat(name)))
    return h


def clamp(lrs: LearningRates) -> LearningRates:
    clamped = {name: min(lrs.hi, max(lrs.lo, value)) for name, value in lrs.alpha.items()}
    return lrs.model_copy(update={"alpha": clamped})


def update_lrs(lrs: LearningRates, h: Mapping[str, float], policy: HyperLRPolicy) -> LearningRates:
    _require_layers("hypergradient", lrs.alpha, h)
    bad = sorted(name for name, value in h.items() if not np.isfinite(value))
    if bad:
        raise NonFiniteError(f"Non-finite hypergradient at iteration {lrs.iteration} for layers {bad}")
    if isinstance(policy, ConstantHyperLR):
        alpha = {name: value - policy.eta * h[name] for name, value in lrs.alpha.items()}
    else:
        alpha = {name: value * (1.0 - policy.beta * h[name]) for name, value in lrs.alpha.items()}
    return clamp(lrs.model_copy(update={"alpha": alpha, "iteration": lrs.iteration + 1}))


def apply_update(params: ParameterTree, lrs_updated: LearningRates, g_train: GradientSnapshot) -> ParameterTree:
    return sgd_step(params, lrs_updated.alpha, g_train)


@dataclass(frozen=True)
class MetaIterationResult:
    model: Network
    lrs: LearningRates
    report: MetaStepReport


def meta_iteration(model: Network, train_batch, val_batch, lrs: LearningRates, policy: HyperLRPolicy,
                   kind: LossKind = LossKind.CROSS_ENTROPY) -> MetaIterationResult:
    """
    One online step: exactly two forward/backward pairs.
    The report's val_loss is the validation loss at the lookahead parameters.
    """
    if len(train_batch.labels) != len(val_batch.labels):
        raise StreamError(
            f"Train and validation batches must have equal size, got {len(train_batch.labels)} "
            f"and {len(val_batch.labels)}"
        )
    params = model.parameters()
    g_train = loss_and_gradients(model, train_batch, kind)
    theta_hat = model.with_parameters(lookahead(params, lrs, g_train))
    g_val = loss_and_gradients(theta_hat, val_batch, kind)

    h = hypergradient(g_train, g_val)
    updated = update_lrs(lrs, h, policy)
    next_model = model.with_parameters(apply_update(params, updated, g_train))

    report = MetaStepReport(
        iteration=lrs.iteration,
        hypergradient=h,
        alpha_before=dict(lrs.alpha),
        alpha_after=dict(updated.alpha),
        train_loss=g_train.loss,
        val_loss=g_val.loss,
    )
    return MetaIterationResult(model=next_model, lrs=updated, report=report)


def select_validation_batch(mode: ValidationMode, val_stream, train_stream):
    """
    SEPARATE_SET draws from the validation stream. HELD_OUT_TRAINING_BATCH peeks at the
    next training batch without consuming it, so it becomes the following iteration's
    training batch.
    """
    if mode == ValidationMode.SEPARATE_SET:
        if val_stream is None or len(val_stream.dataset) == 0:
            raise StreamError("Separate-set validation needs a nonempty validation stream")
        return val_stream.next_batch()
    return train_stream.peek()
