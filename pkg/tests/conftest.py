import logging
from pathlib import Path

import numpy as np
import pytest

from metalr.db.datasets import Batch
from metalr.db.tasks import synth_shared_features_task
from metalr.models.networks import ModelSpec, build_cnn, build_mlp

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

# Flat config small enough for a full pretrain/fine-tune pipeline in well under a second per seed
TINY_CONFIG = {
    "task.input_dim": 8,
    "task.latent_dim": 2,
    "task.num_classes": 3,
    "task.n_source": 200,
    "task.n_target": 80,
    "task.n_test": 100,
    "model.hidden": 8,
    "pretrain.iterations": 60,
    "pretrain.batch_size": 16,
    "train.iterations": 20,
    "train.batch_size": 8,
    "train.log_every": 10,
    "run.seeds": "0,1",
}


@pytest.fixture(autouse=True)
def restore_root_logging():
    """configure_logging() replaces root handlers; put pytest's back after each test."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def small_task():
    """80 target samples (60 train / 20 val), 100 test, 3 classes, 8 features."""
    return synth_shared_features_task(
        seed=0, input_dim=8, latent_dim=2, num_classes=3,
        n_source=300, n_target=80, n_test=100,
    )


@pytest.fixture
def small_mlp():
    return build_mlp(ModelSpec.mlp([8, 6, 3], seed=0))


@pytest.fixture
def small_cnn():
    spec = ModelSpec.cnn((1, 4, 4), [2], num_outputs=3, kernel=3, padding="same", pool=2, seed=0)
    return build_cnn(spec)


def make_batch(inputs, labels) -> Batch:
    inputs = np.asarray(inputs, dtype=np.float64)
    return Batch(inputs=inputs, labels=np.asarray(labels), indices=np.arange(len(inputs)))


def random_classification_batch(rng: np.random.Generator, shape, num_classes: int, n: int = 6) -> Batch:
    return make_batch(rng.normal(size=(n, *shape)), rng.integers(0, num_classes, size=n))


def tiny_config(**overrides):
    flat = dict(TINY_CONFIG)
    flat.update(overrides)
    return flat


def jitter_parameters(model, rng: np.random.Generator, scale: float = 0.1):
    """Add N(0, scale) noise to every tensor; zero biases otherwise put dead-unit pre-activations on the ReLU kink."""
    return model.with_parameters({
        name: {key: value + rng.normal(0.0, scale, size=value.shape) for key, value in tensors.items()}
        for name, tensors in model.parameters().items()
    })
