# metalr/models/networks.py
"""
Small named-layer models and the per-layer parameter partition MetaLR works over.

A Network is an immutable value: parameter arrays are read-only and every update
goes through `with_parameters`, which returns a new Network with a new version.
"""
import itertools
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from metalr.core.errors import LayerSetMismatchError, ShapeMismatchError, SpecError
from metalr.core.layers import Affine, Conv2D, Flatten, Layer, MaxPool2D, ReLU

logger = logging.getLogger(__name__)

ParameterTree = Dict[str, Dict[str, np.ndarray]]

_LABEL_PREFIX = {"affine": "fc", "conv2d": "conv", "relu": "relu", "maxpool": "pool", "flatten": "flatten"}
_versions = itertools.count(1)


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["affine", "conv2d", "relu", "maxpool", "flatten"]
    units: Optional[int] = Field(default=None, ge=1)       # affine outputs
    inputs: Optional[int] = Field(default=None, ge=1)      # affine inputs, checked when given
    channels: Optional[int] = Field(default=None, ge=1)    # conv output channels
    kernel: int = Field(default=3, ge=1)
    padding: Literal["valid", "same"] = "valid"
    size: int = Field(default=2, ge=1)
    bias: bool = True


class ModelSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    input_shape: Tuple[int, ...]
    layers: List[LayerSpec]
    seed: int = 0

    @classmethod
    def mlp(cls, sizes: Sequence[int], seed: int = 0, activation: str = "relu", bias: bool = True) -> "ModelSpec":
        """[4, 8, 2] -> fc1(4→8), relu1, fc2(8→2)."""
        if activation not in ("relu", "identity"):
            raise SpecError(f"Unknown activation '{activation}'")
        layers: List[LayerSpec] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if i > 0 and activation == "relu":
                layers.append(LayerSpec(kind="relu"))
            layers.append(LayerSpec(kind="affine", inputs=fan_in, units=fan_out, bias=bias))
        return cls(input_shape=(sizes[0],), layers=layers, seed=seed)

    @classmethod
    def cnn(
        cls,
        input_shape: Sequence[int],
        conv_channels: Sequence[int],
        num_outputs: int,
        kernel: int = 3,
        padding: str = "same",
        pool: int = 2,
        hidden: Sequence[int] = (),
        seed: int = 0,
    ) -> "ModelSpec":
        """conv → relu → pool per entry of `conv_channels`, then flatten and an MLP head."""
        layers: List[LayerSpec] = []
        for channels in conv_channels:
            layers.append(LayerSpec(kind="conv2d", channels=channels, kernel=kernel, padding=padding))
            layers.append(LayerSpec(kind="relu"))
            if pool > 1:
                layers.append(LayerSpec(kind="maxpool", size=pool))
        layers.append(LayerSpec(kind="flatten"))
        for units in hidden:
            layers.append(LayerSpec(kind="affine", units=units))
            layers.append(LayerSpec(kind="relu"))
        layers.append(LayerSpec(kind="affine", units=num_outputs))
        return cls(input_shape=tuple(input_shape), layers=layers, seed=seed)


@dataclass(frozen=True)
class ParameterGroup:
    """One learning-rate unit: a parameterized layer's tensors at depth j (1-based)."""
    name: str
    depth: int
    parameters: Dict[str, np.ndarray]

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {key: value.shape for key, value in self.parameters.items()}


def _read_only(value: np.ndarray) -> np.ndarray:
    array = np.array(value, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


class Network:
    def __init__(self, spec: ModelSpec, layers: Sequence[Layer], params: Mapping[str, Mapping[str, np.ndarray]]):
        self.spec = spec
        self.layers: Tuple[Layer, ...] = tuple(layers)
        self._params: ParameterTree = {
            name: {key: value if not value.flags.writeable else _read_only(value) for key, value in tensors.items()}
            for name, tensors in params.items()
        }
        self.version = next(_versions)

    @property
    def layer_labels(self) -> List[str]:
        return [layer.label for layer in self.layers]

    @property
    def depth(self) -> int:
        return len(self._params)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return self.layers[0].input_shape

    @property
    def output_shape(self) -> Tuple[int, ...]:
        return self.layers[-1].output_shape

    def group_names(self) -> List[str]:
        return [layer.label for layer in self.layers if layer.param_shapes]

    def groups(self) -> List[ParameterGroup]:
        return [
            ParameterGroup(name=name, depth=j, parameters=dict(self._params[name]))
            for j, name in enumerate(self.group_names(), start=1)
        ]

    def parameters(self) -> ParameterTree:
        return {name: dict(self._params[name]) for name in self.group_names()}

    def params_for(self, label: str) -> Dict[str, np.ndarray]:
        return self._params.get(label, {})

    def num_parameters(self) -> int:
        return sum(value.size for tensors in self._params.values() for value in tensors.values())

    def with_parameters(self, updates: Mapping[str, Mapping[str, np.ndarray]]) -> "Network":
        """New Network with some tensors replaced; names, keys and shapes must match."""
        unknown = set(updates) - set(self._params)
        if unknown:
            raise LayerSetMismatchError("with_parameters", self.group_names(), list(updates))
        merged: ParameterTree = {name: dict(tensors) for name, tensors in self._params.items()}
        for name, tensors in updates.items():
            for key, value in tensors.items():
                if key not in merged[name]:
                    raise SpecError(f"Layer '{name}' has no parameter '{key}'")
                value = np.asarray(value, dtype=np.float64)
                if value.shape != merged[name][key].shape:
                    raise ShapeMismatchError(f"{name}.{key}", merged[name][key].shape, value.shape)
                merged[name][key] = value
        return Network(self.spec, self.layers, merged)

    def __repr__(self) -> str:
        return f"Network(layers={self.layer_labels}, depth={self.depth}, version={self.version})"


def _make_layer(spec: LayerSpec, shape: Tuple[int, ...], label: str) -> Layer:
    if spec.kind == "affine":
        if len(shape) != 1:
            raise SpecError(f"{label}: affine expects a flat input, got {shape}")
        if spec.units is None:
            raise SpecError(f"{label}: affine needs 'units'")
        if spec.inputs is not None and spec.inputs != shape[0]:
            raise SpecError(f"{label}: declared {spec.inputs} inputs but previous layer produces {shape[0]}")
        return Affine(shape[0], spec.units, bias=spec.bias, label=label)
    if spec.kind == "conv2d":
        if len(shape) != 3:
            raise SpecError(f"{label}: conv2d expects (channels, height, width), got {shape}")
        if spec.channels is None:
            raise SpecError(f"{label}: conv2d needs 'channels'")
        return Conv2D(shape[0], spec.channels, spec.kernel, shape[1], shape[2], padding=spec.padding, label=label)
    if spec.kind == "maxpool":
        if len(shape) != 3:
            raise SpecError(f"{label}: maxpool expects (channels, height, width), got {shape}")
        return MaxPool2D(shape[0], shape[1], shape[2], size=spec.size, label=label)
    if spec.kind == "relu":
        return ReLU(shape, label=label)
    return Flatten(shape, label=label)


def _init_gain(layers: Sequence[Layer], index: int) -> float:
    following = layers[index + 1] if index + 1 < len(layers) else None
    return 2.0 if isinstance(following, ReLU) else 1.0


def _init_group(layers: Sequence[Layer], index: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    return layers[index].init_params(rng, _init_gain(layers, index))


def build_network(spec: ModelSpec) -> Network:
    """Build any layer stack; parameters drawn per depth from default_rng([seed, depth])."""
    if not spec.input_shape or any(dim < 1 for dim in spec.input_shape):
        raise SpecError(f"Invalid input shape {spec.input_shape}")
    layers: List[Layer] = []
    counts: Counter = Counter()
    shape = tuple(spec.input_shape)
    for layer_spec in spec.layers:
        counts[layer_spec.kind] += 1
        label = f"{_LABEL_PREFIX[layer_spec.kind]}{counts[layer_spec.kind]}"
        layer = _make_layer(layer_spec, shape, label)
        layers.append(layer)
        shape = layer.output_shape

    params: ParameterTree = {}
    depth = 0
    for index, layer in enumerate(layers):
        if layer.param_shapes:
            depth += 1
            rng = np.random.default_rng([spec.seed, depth])
            params[layer.label] = _init_group(layers, index, rng)
    if depth == 0:
        raise SpecError("Model has no parameterized layer")

    network = Network(spec, layers, params)
    logger.debug(f"Built {network} with {network.num_parameters()} parameters")
    return network


def build_mlp(spec: ModelSpec) -> Network:
    if len(spec.input_shape) != 1:
        raise SpecError(f"MLP input must be a flat vector, got shape {spec.input_shape}")
    kinds = [layer.kind for layer in spec.layers]
    if any(kind not in ("affine", "relu") for kind in kinds):
        raise SpecError(f"MLP supports only affine and relu layers, got {kinds}")
    if kinds.count("affine") < 2:
        raise SpecError("MLP needs at least 2 affine layers")
    return build_network(spec)


def build_cnn(spec: ModelSpec) -> Network:
    if len(spec.input_shape) != 3:
        raise SpecError(f"CNN input must be (channels, height, width), got shape {spec.input_shape}")
    if not any(layer.kind == "conv2d" for layer in spec.layers):
        raise SpecError("CNN needs at least one conv2d layer")
    return build_network(spec)


def layer_groups(model: Network) -> List[str]:
    """ParameterGroup names in depth order, e.g. ['conv1', 'fc1']."""
    return model.group_names()


def reinit_head(model: Network, k: int, seed: Optional[int] = None) -> Network:
    """Redraw the last k ParameterGroups from a fresh stream; earlier groups are untouched."""
    d = model.depth
    if not 1 <= k < d:
        raise SpecError(f"reinit_head needs 1 <= k < d={d}, got k={k}")
    seed = model.spec.seed if seed is None else seed
    names = model.group_names()
    index_of = {layer.label: i for i, layer in enumerate(model.layers)}
    updates: ParameterTree = {}
    for depth in range(d - k + 1, d + 1):
        name = names[depth - 1]
        rng = np.random.default_rng([seed, depth, 1])
        updates[name] = _init_group(model.layers, index_of[name], rng)
    logger.debug(f"Re-initialized head groups {list(updates)} with seed {seed}")
    return model.with_parameters(updates)
