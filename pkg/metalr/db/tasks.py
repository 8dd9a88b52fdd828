# metalr/db/tasks.py
"""
Synthetic source→target tasks whose layer transferability is known by construction.

Inputs x ~ N(0, I_D) pass through a shared projection z = x W* (D → L). Source labels
are argmax(z A), target labels argmax(z B) for heads A and B, then a
fraction ρ of labels is moved to a uniformly chosen other class. A model pretrained
on the source learns features that span W* (transferable) and a head fitted to A
(not transferable to B). `head_overlap` c mixes the heads, B = c A + sqrt(1 − c²) B0,
so c = 0 keeps them independent and c → 1 makes the source head reusable.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from metalr.core.errors import DatasetError
from metalr.db.datasets import Dataset, split_train_validation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruth:
    projection: np.ndarray   # W*, (D, L)
    source_head: np.ndarray  # A, (L, K)
    target_head: np.ndarray  # B, (L, K)
    feature_mean: np.ndarray
    feature_std: np.ndarray


@dataclass(frozen=True)
class TransferTask:
    source: Dataset
    target_train: Dataset
    target_val: Dataset
    target_test: Dataset
    transferability: str
    num_classes: int
    ground_truth: Optional[GroundTruth] = None

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return self.source.feature_shape

    @property
    def target_pool(self) -> Dataset:
        """target_train ∪ target_val, for schemes that do not hold out a validation split."""
        return Dataset.concat([self.target_train, self.target_val], name="target/pool")


def _flip_labels(labels: np.ndarray, num_classes: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    flip = rng.random(len(labels)) < noise
    offsets = rng.integers(1, num_classes, size=len(labels))
    return np.where(flip, (labels + offsets) % num_classes, labels)


def synth_shared_features_task(
    seed: int = 0,
    input_dim: int = 16,
    latent_dim: int = 3,
    num_classes: int = 4,
    n_source: int = 4000,
    n_target: int = 400,
    n_test: int = 1000,
    label_noise: float = 0.05,
    head_overlap: float = 0.0,
    validation_fraction: float = 0.25,
    image_side: Optional[int] = None,
) -> TransferTask:
    """
    Build a TransferTask. With `image_side`, inputs are laid out as (1, side, side)
    images and `input_dim` must equal side².
    """
    if input_dim < 2 or latent_dim < 1 or latent_dim > input_dim:
        raise DatasetError(f"need 1 <= latent_dim <= input_dim and input_dim >= 2, got {latent_dim}/{input_dim}")
    if num_classes < 2:
        raise DatasetError(f"need at least 2 classes, got {num_classes}")
    if min(n_source, n_target, n_test) < 1:
        raise DatasetError(f"sample counts must be positive, got {n_source}/{n_target}/{n_test}")
    if not 0.0 <= label_noise <= 1.0:
        raise DatasetError(f"label noise must lie in [0, 1], got {label_noise}")
    if not 0.0 <= head_overlap <= 1.0:
        raise DatasetError(f"head overlap must lie in [0, 1], got {head_overlap}")
    if image_side is not None and image_side * image_side != input_dim:
        raise DatasetError(f"image side {image_side} does not match input_dim {input_dim}")

    rng = np.random.default_rng([seed, 7])
    projection = rng.normal(size=(input_dim, latent_dim)) / math.sqrt(input_dim)
    source_head = rng.normal(size=(latent_dim, num_classes))
    independent_head = rng.normal(size=(latent_dim, num_classes))
    target_head = head_overlap * source_head + math.sqrt(1.0 - head_overlap ** 2) * independent_head

    x_source = rng.normal(size=(n_source, input_dim))
    x_target = rng.normal(size=(n_target + n_test, input_dim))
    y_source = _flip_labels(np.argmax(x_source @ projection @ source_head, axis=1), num_classes, label_noise, rng)
    y_target = _flip_labels(np.argmax(x_target @ projection @ target_head, axis=1), num_classes, label_noise, rng)

    mean = x_source.mean(axis=0)
    std = x_source.std(axis=0)
    std = np.where(std > 0, std, 1.0)

    def features(x: np.ndarray) -> np.ndarray:
        x = (x - mean) / std
        return x.reshape(len(x), 1, image_side, image_side) if image_side else x

    source = Dataset(features(x_source), y_source, name="source", num_classes=num_classes)
    target = Dataset(features(x_target), y_target, name="target", num_classes=num_classes)
    pool = target.subset(np.arange(n_target), name="target")
    test = target.subset(np.arange(n_target, n_target + n_test), name="target/test")
    train, val = split_train_validation(pool, validation_fraction, seed)

    task = TransferTask(
        source=source,
        target_train=train,
        target_val=val,
        target_test=test,
        transferability=(
            f"first layer transferable: shared projection {input_dim}->{latent_dim}; "
            f"head not transferable: source and target heads over {num_classes} classes "
            f"with overlap {head_overlap}"
        ),
        num_classes=num_classes,
        ground_truth=GroundTruth(projection, source_head, target_head, mean, std),
    )
    logger.info(
        f"Built synthetic task seed={seed}: source={len(source)}, target train/val/test="
        f"{len(train)}/{len(val)}/{len(test)}, noise={label_noise}, head overlap={head_overlap}"
    )
    return task
