# metalr/db/datasets.py
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from metalr.core.errors import (
    DatasetError,
    DatasetFormatError,
    LabelRangeError,
    MalformedHeaderError,
    ReportIOError,
    StreamError,
    TruncatedPayloadError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IDX_UBYTE = 0x08


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class Dataset:
    """
    N samples with labels. `source_indices` records each sample's position in the
    dataset it was cut from, so splits can be checked for disjointness.
    """
    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    num_classes: Optional[int] = None
    source_indices: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels)
        if inputs.ndim < 2:
            raise DatasetError(f"{self.name}: inputs need a sample axis plus features, got shape {inputs.shape}")
        if labels.shape[:1] != inputs.shape[:1]:
            raise DatasetError(f"{self.name}: {inputs.shape[0]} inputs but {labels.shape[0]} labels")
        if self.num_classes is not None and labels.size:
            if labels.min() < 0 or labels.max() >= self.num_classes:
                raise LabelRangeError(
                    f"{self.name}: labels must lie in [0, {self.num_classes}), got [{labels.min()}, {labels.max()}]"
                )
        indices = np.arange(len(labels)) if self.source_indices is None else np.asarray(self.source_indices)
        object.__setattr__(self, "inputs", _frozen(inputs))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "source_indices", _frozen(indices))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_shape(self) -> Tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, indices: np.ndarray, name: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            inputs=self.inputs[indices],
            labels=self.labels[indices],
            name=name or self.name,
            num_classes=self.num_classes,
            source_indices=self.source_indices[indices],
        )

    @classmethod
    def concat(cls, parts: Sequence["Dataset"], name: str) -> "Dataset":
        return cls(
            inputs=np.concatenate([part.inputs for part in parts]),
            labels=np.concatenate([part.labels for part in parts]),
            name=name,
            num_classes=parts[0].num_classes,
            source_indices=np.concatenate([part.source_indices for part in parts]),
        )


class BatchStream:
    """
    Shuffled, drop-last batches of exactly `batch_size` samples.

    Every epoch is a permutation of the dataset. When N >= 2n, samples of the batch
    served last are moved out of the first batch of a new epoch, so a peeked batch
    never overlaps the batch currently being trained on.
    """

    def __init__(self, dataset: Dataset, batch_size: int, seed: int = 0, salt: int = 0):
        if batch_size < 1:
            raise StreamError(f"batch size must be positive, got {batch_size}")
        if batch_size > len(dataset):
            raise StreamError(f"batch size {batch_size} exceeds the {len(dataset)} samples of '{dataset.name}'")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self._rng = np.random.default_rng([seed, salt])
        self._order: Optional[np.ndarray] = None
        self._cursor = 0
        self._pending: Optional[Batch] = None
        self._last_served = np.empty(0, dtype=np.int64)

    @property
    def batches_per_epoch(self) -> int:
        return len(self.dataset) // self.batch_size

    def _start_epoch(self) -> None:
        n, total = self.batch_size, len(self.dataset)
        order = self._rng.permutation(total)
        if self._last_served.size and total >= 2 * n:
            clash = np.flatnonzero(np.isin(order[:n], self._last_served))
            if clash.size:
                spare = np.flatnonzero(~np.isin(order[n:], self._last_served))[:clash.size] + n
                order[clash], order[spare] = order[spare].copy(), order[clash].copy()
        self._order = order
        self._cursor = 0
        self.epoch += 1

    def _draw(self) -> Batch:
        if self._order is None or self._cursor + self.batch_size > len(self._order):
            self._start_epoch()
        indices = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return Batch(inputs=self.dataset.inputs[indices], labels=self.dataset.labels[indices], indices=indices)

    def next_batch(self) -> Batch:
        if self._pending is not None:
            batch, self._pending = self._pending, None
        else:
            batch = self._draw()
        self._last_served = batch.indices
        return batch

    def peek(self) -> Batch:
        """The batch next_batch() will return, without consuming it."""
        if self._pending is None:
            self._pending = self._draw()
        return self._pending


def batch_stream(dataset: Dataset, n: int, seed: int = 0) -> BatchStream:
    return BatchStream(dataset, n, seed)


def split_train_validation(dataset: Dataset, fraction: float, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Seeded split into ⌈(1−f)N⌉ training and ⌊fN⌋ validation samples."""
    if not 0.0 < fraction < 1.0:
        raise DatasetError(f"validation fraction must lie in (0, 1), got {fraction}")
    total = len(dataset)
    n_val = math.floor(round(fraction * total, 9))
    if n_val == 0 or n_val == total:
        raise DatasetError(f"fraction {fraction} of {total} samples leaves an empty split")
    order = np.random.default_rng([seed, 2]).permutation(total)
    val = dataset.subset(np.sort(order[:n_val]), name=f"{dataset.name}/val")
    train = dataset.subset(np.sort(order[n_val:]), name=f"{dataset.name}/train")
    return train, val


# IDX ingestion
def read_idx(path: PathLike) -> np.ndarray:
    """Unsigned-byte IDX file (big-endian dims) as a uint8 array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DatasetFormatError(f"{path}: cannot read IDX file: {e}") from e
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise MalformedHeaderError(f"{path}: missing IDX magic number")
    if data[2] != IDX_UBYTE:
        raise MalformedHeaderError(f"{path}: unsupported IDX element type 0x{data[2]:02x}, only unsigned byte")
    ndim = data[3]
    if ndim == 0 or len(data) < 4 + 4 * ndim:
        raise MalformedHeaderError(f"{path}: IDX header declares {ndim} dimensions but is cut short")
    dims = tuple(int(d) for d in np.frombuffer(data, dtype=">u4", count=ndim, offset=4))
    expected = int(np.prod(dims))
    payload = data[4 + 4 * ndim:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: expected {expected} payload bytes for dims {dims}, got {len(payload)}")
    if len(payload) > expected:
        raise DatasetFormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(path: PathLike, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise DatasetFormatError(f"IDX writer only supports uint8 arrays, got {array.dtype}")
    header = bytes([0, 0, IDX_UBYTE, array.ndim]) + np.asarray(array.shape, dtype=">u4").tobytes()
    try:
        Path(path).write_bytes(header + array.tobytes())
    except OSError as e:
        raise ReportIOError(str(path), f"cannot write IDX file: {e}") from e


def _validated_labels(labels: np.ndarray, num_classes: Optional[int], source: str) -> Tuple[np.ndarray, int]:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise LabelRangeError(f"{source}: negative label {labels.min()}")
    inferred = int(labels.max()) + 1 if labels.size else 0
    if num_classes is None:
        return labels, inferred
    if inferred > num_classes:
        raise LabelRangeError(f"{source}: label {inferred - 1} outside [0, {num_classes})")
    return labels, num_classes


def load_idx(images_path: PathLike, labels_path: PathLike, num_classes: Optional[int] = None,
             name: Optional[str] = None) -> Dataset:
    """
    Image IDX (N, H, W) becomes (N, 1, H, W) scaled to [0, 1]; rank-2 IDX (N, k)
    is read as flat features, also scaled.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise MalformedHeaderError(f"{labels_path}: label file must be rank 1, got rank {labels.ndim}")
    if images.ndim not in (2, 3):
        raise MalformedHeaderError(f"{images_path}: expected rank 2 or 3 IDX data, got rank {images.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(f"{images_path}: {images.shape[0]} samples but {labels.shape[0]} labels")
    inputs = images.astype(np.float64) / 255.0
    if inputs.ndim == 3:
        inputs = inputs[:, None, :, :]
    labels, classes = _validated_labels(labels, num_classes, str(labels_path))
    dataset = Dataset(inputs, labels, name=name or Path(images_path).stem, num_classes=classes)
    logger.info(f"Loaded {len(dataset)} samples of shape {dataset.feature_shape} from {images_path}")
    return dataset


def write_idx_dataset(dataset: Dataset, images_path: PathLike, labels_path: PathLike) -> None:
    """Inverse of load_idx for inputs that are multiples of 1/255 in [0, 1]."""
    inputs = dataset.inputs
    if inputs.ndim == 4:
        if inputs.shape[1] != 1:
            raise DatasetFormatError(f"IDX images must have a single channel, got {inputs.shape[1]}")
        inputs = inputs[:, 0]
    if inputs.min(initial=0.0) < 0.0 or inputs.max(initial=0.0) > 1.0:
        raise DatasetFormatError("IDX export needs inputs scaled to [0, 1]")
    write_idx(images_path, np.rint(inputs * 255.0).astype(np.uint8))
    write_idx(labels_path, np.asarray(dataset.labels).astype(np.uint8))


# CSV ingestion
def load_csv(path: PathLike, num_classes: Optional[int] = None, feature_shape: Optional[Sequence[int]] = None,
             name: Optional[str] = None) -> Dataset:
    """CSV with header `label,f1,...,fk`; rows become (N, k) features or `feature_shape` per sample."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError as e:
        raise MalformedHeaderError(f"{path}: empty CSV file") from e
    except (OSError, pd.errors.ParserError) as e:
        raise DatasetFormatError(f"{path}: cannot parse CSV: {e}") from e

    columns = list(frame.columns)
    expected = ["label"] + [f"f{i}" for i in range(1, len(columns))]
    if len(columns) < 2 or columns != expected:
        raise MalformedHeaderError(f"{path}: header must be 'label,f1..fk', got {','.join(map(str, columns))}")
    if frame.empty:
        raise TruncatedPayloadError(f"{path}: header present but no rows")
    if frame.isna().any().any():
        raise TruncatedPayloadError(f"{path}: missing values in {int(frame.isna().any(axis=1).sum())} rows")
    try:
        features = frame[expected[1:]].to_numpy(dtype=np.float64)
    except ValueError as e:
        raise DatasetFormatError(f"{path}: non-numeric feature values") from e

    raw_labels = frame["label"].to_numpy()
    if not np.issubdtype(raw_labels.dtype, np.integer):
        raise LabelRangeError(f"{path}: labels must be integers, got dtype {raw_labels.dtype}")
    labels, classes = _validated_labels(raw_labels, num_classes, str(path))
    if feature_shape is not None:
        features = features.reshape((len(features), *feature_shape))
    return Dataset(features, labels, name=name or path.stem, num_classes=classes)


def write_csv(dataset: Dataset, path: PathLike) -> None:
    flat = dataset.inputs.reshape(len(dataset), -1)
    frame = pd.DataFrame(flat, columns=[f"f{i}" for i in range(1, flat.shape[1] + 1)])
    frame.insert(0, "label", np.asarray(dataset.labels).astype(np.int64))
    try:
        frame.to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise ReportIOError(str(path), f"cannot write CSV: {e}") from e
