# metalr/core/layers.py
"""
Cache-based layers for small MLPs and CNNs.

Every layer exposes the same three calls:
    forward(x, params)            -> (out, cache)
    backward(dout, cache, params) -> (dx, grads)
    init_params(rng, gain)        -> params

Inputs carry a leading batch axis; `input_shape` / `output_shape` are per sample.
Convolutions are stride 1 with "valid" or "same" padding, pooling is
non-overlapping.
"""
from dataclasses import dataclass
from typing import Any, ClassVar, Dict, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from metalr.core.errors import ShapeMismatchError, SpecError

Params = Dict[str, np.ndarray]
Grads = Dict[str, np.ndarray]


class Layer:
    kind: ClassVar[str] = "layer"
    label: str

    @property
    def input_shape(self) -> Tuple[int, ...]:
        raise NotImplementedError

    @property
    def output_shape(self) -> Tuple[int, ...]:
        raise NotImplementedError

    @property
    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {}

    @property
    def fan_in(self) -> int:
        return 1

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatchError(self.label, self.input_shape, tuple(x.shape[1:]))

    def forward(self, x: np.ndarray, params: Params) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, dout: np.ndarray, cache: Any, params: Params) -> Tuple[np.ndarray, Grads]:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator, gain: float) -> Params:
        """He-style normal weights (gain 2 before a ReLU, 1 otherwise), zero biases."""
        params: Params = {}
        for key, shape in self.param_shapes.items():
            if key == "bias":
                params[key] = np.zeros(shape, dtype=np.float64)
            else:
                params[key] = rng.normal(0.0, np.sqrt(gain / self.fan_in), size=shape)
        return params


@dataclass
class Affine(Layer):
    in_features: int
    out_features: int
    bias: bool = True
    label: str = "fc"
    kind: ClassVar[str] = "affine"

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return (self.in_features,)

    @property
    def output_shape(self) -> Tuple[int, ...]:
        return (self.out_features,)

    @property
    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes = {"weight": (self.in_features, self.out_features)}
        if self.bias:
            shapes["bias"] = (self.out_features,)
        return shapes

    @property
    def fan_in(self) -> int:
        return self.in_features

    def forward(self, x, params):
        out = x @ params["weight"]
        if self.bias:
            out = out + params["bias"]
        return out, x

    def backward(self, dout, cache, params):
        grads = {"weight": cache.T @ dout}
        if self.bias:
            grads["bias"] = dout.sum(axis=0)
        return dout @ params["weight"].T, grads


@dataclass
class Conv2D(Layer):
    in_channels: int
    out_channels: int
    kernel_size: int
    height: int
    width: int
    padding: str = "valid"
    label: str = "conv"
    kind: ClassVar[str] = "conv2d"

    def __post_init__(self):
        if self.padding not in ("valid", "same"):
            raise SpecError(f"{self.label}: padding must be 'valid' or 'same', got '{self.padding}'")
        if self.padding == "same" and self.kernel_size % 2 == 0:
            raise SpecError(f"{self.label}: 'same' padding needs an odd kernel, got {self.kernel_size}")
        if self.out_height < 1 or self.out_width < 1:
            raise SpecError(
                f"{self.label}: kernel {self.kernel_size} does not fit input {self.height}x{self.width}"
            )

    @property
    def pad(self) -> int:
        return (self.kernel_size - 1) // 2 if self.padding == "same" else 0

    @property
    def out_height(self) -> int:
        return self.height + 2 * self.pad - self.kernel_size + 1

    @property
    def out_width(self) -> int:
        return self.width + 2 * self.pad - self.kernel_size + 1

    @property
    def input_shape(self):
        return (self.in_channels, self.height, self.width)

    @property
    def output_shape(self):
        return (self.out_channels, self.out_height, self.out_width)

    @property
    def param_shapes(self):
        k = self.kernel_size
        return {"weight": (self.out_channels, self.in_channels, k, k), "bias": (self.out_channels,)}

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_size * self.kernel_size

    def _windows(self, padded: np.ndarray) -> np.ndarray:
        # (N, C, Ho, Wo, k, k)
        k = self.kernel_size
        return sliding_window_view(padded, (k, k), axis=(2, 3))

    def forward(self, x, params):
        p = self.pad
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        out = np.einsum("nchwij,ocij->nohw", self._windows(padded), params["weight"])
        out = out + params["bias"][None, :, None, None]
        return out, padded

    def backward(self, dout, cache, params):
        weight = params["weight"]
        k, p = self.kernel_size, self.pad
        ho, wo = self.out_height, self.out_width
        grads = {
            "weight": np.einsum("nohw,nchwij->ocij", dout, self._windows(cache)),
            "bias": dout.sum(axis=(0, 2, 3)),
        }
        dpadded = np.zeros_like(cache)
        for i in range(k):
            for j in range(k):
                dpadded[:, :, i:i + ho, j:j + wo] += np.einsum("nohw,oc->nchw", dout, weight[:, :, i, j])
        dx = dpadded[:, :, p:p + self.height, p:p + self.width] if p else dpadded
        return dx, grads


@dataclass
class ReLU(Layer):
    shape: Tuple[int, ...]
    label: str = "relu"
    kind: ClassVar[str] = "relu"

    @property
    def input_shape(self):
        return tuple(self.shape)

    @property
    def output_shape(self):
        return tuple(self.shape)

    def forward(self, x, params):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, dout, cache, params):
        return np.where(cache, dout, 0.0), {}


@dataclass
class MaxPool2D(Layer):
    channels: int
    height: int
    width: int
    size: int = 2
    label: str = "pool"
    kind: ClassVar[str] = "maxpool"

    def __post_init__(self):
        if self.size < 1 or self.height % self.size or self.width % self.size:
            raise SpecError(
                f"{self.label}: pool size {self.size} must divide input {self.height}x{self.width}"
            )

    @property
    def input_shape(self):
        return (self.channels, self.height, self.width)

    @property
    def output_shape(self):
        return (self.channels, self.height // self.size, self.width // self.size)

    def _blocks(self, x: np.ndarray) -> np.ndarray:
        n, s = x.shape[0], self.size
        c, ho, wo = self.output_shape
        return x.reshape(n, c, ho, s, wo, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, s * s)

    def forward(self, x, params):
        blocks = self._blocks(x)
        winners = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, winners[..., None], axis=-1)[..., 0]
        return out, winners

    def backward(self, dout, cache, params):
        n, s = dout.shape[0], self.size
        c, ho, wo = self.output_shape
        dblocks = np.zeros((n, c, ho, wo, s * s), dtype=np.float64)
        np.put_along_axis(dblocks, cache[..., None], dout[..., None], axis=-1)
        dx = dblocks.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, self.height, self.width)
        return dx, {}


@dataclass
class Flatten(Layer):
    shape: Tuple[int, ...]
    label: str = "flatten"
    kind: ClassVar[str] = "flatten"

    @property
    def input_shape(self):
        return tuple(self.shape)

    @property
    def output_shape(self):
        return (int(np.prod(self.shape)),)

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache, params):
        return dout.reshape(cache), {}
