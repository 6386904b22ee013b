"""Layer zoo: declarative specs, parameterized layers, and parameter sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid", "tanh")
LAYER_KINDS = ("conv", "transposed-conv", "linear", "normalization", "activation", "concat", "resize")


class LayerSpecError(ValueError):
    """Construction-time shape or hyperparameter error."""


@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer record; output shape is computable before building.

    Shapes exclude the batch axis: (C, H, W) for maps, (F,) for vectors.
    """

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0
    activation: str = "relu"
    factor: int = 2
    mode: str = "down"  # resize: "down" (average pool) or "up" (nearest)
    extra_channels: int = 0  # concat: channels appended by the side input

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise LayerSpecError(f"unknown layer kind {self.kind!r}")
        if self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise LayerSpecError(f"unknown activation {self.activation!r}")
        if self.kind == "resize" and self.mode not in ("down", "up"):
            raise LayerSpecError(f"resize mode must be 'down' or 'up', got {self.mode!r}")

    def out_shape(self, in_shape: tuple) -> tuple:
        k = self.kind
        if k == "linear":
            if in_shape != (self.in_features,):
                raise LayerSpecError(f"linear expects ({self.in_features},), got {in_shape}")
            return (self.out_features,)
        if k == "activation":
            return tuple(in_shape)
        if len(in_shape) != 3:
            raise LayerSpecError(f"{k} expects a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        if k == "conv":
            if c != self.in_channels:
                raise LayerSpecError(f"conv expects {self.in_channels} channels, got {c}")
            ho, wo = T._conv_geometry(h, w, self.kernel, self.kernel, self.stride, self.padding)
            return (self.out_channels, ho, wo)
        if k == "transposed-conv":
            if c != self.in_channels:
                raise LayerSpecError(f"transposed-conv expects {self.in_channels} channels, got {c}")
            ho = (h - 1) * self.stride - 2 * self.padding + self.kernel
            wo = (w - 1) * self.stride - 2 * self.padding + self.kernel
            if ho <= 0 or wo <= 0:
                raise LayerSpecError("transposed-conv output collapses")
            return (self.out_channels, ho, wo)
        if k == "normalization":
            if c != self.in_channels:
                raise LayerSpecError(f"normalization expects {self.in_channels} channels, got {c}")
            return tuple(in_shape)
        if k == "concat":
            return (c + self.extra_channels, h, w)
        if k == "resize":
            if self.mode == "up":
                return (c, h * self.factor, w * self.factor)
            if h % self.factor or w % self.factor:
                raise LayerSpecError(f"resize factor {self.factor} does not divide {h}x{w}")
            return (c, h // self.factor, w // self.factor)
        raise LayerSpecError(f"unknown layer kind {k!r}")


class Param:
    """A named leaf tensor with gradient buffer and Adam state."""

    __slots__ = ("name", "tensor", "m", "v")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.tensor = Tensor(value, requires_grad=True)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)

    @property
    def value(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


class ParamSet:
    """Ordered collection of named parameters plus optimizer step counter."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(name, value)
        self._params[name] = p
        return p

    def merge(self, other: "ParamSet", prefix: str = "") -> None:
        for name, p in other._params.items():
            key = f"{prefix}{name}"
            if key in self._params:
                raise ValueError(f"duplicate parameter name {key!r}")
            self._params[key] = p

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def names(self):
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self:
            p.tensor.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter names mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.value.shape}")
            p.tensor.data = arr.astype(p.value.dtype)
            p.m = np.zeros_like(p.tensor.data)
            p.v = np.zeros_like(p.tensor.data)


def _he_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / max(fan_in, 1))).astype(dtype)


class Conv2d:
    def __init__(self, params: ParamSet, name: str, cin: int, cout: int, kernel: int, stride: int, pad: int, rng, dtype=np.float64):
        self.stride, self.pad = stride, pad
        fan_in = cin * kernel * kernel
        self.weight = params.add(f"{name}.weight", _he_init(rng, (cout, cin, kernel, kernel), fan_in, dtype))
        self.bias = params.add(f"{name}.bias", np.zeros(cout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight.tensor, self.bias.tensor, self.stride, self.pad)


class ConvTranspose2d:
    def __init__(self, params: ParamSet, name: str, cin: int, cout: int, kernel: int, stride: int, pad: int, rng, dtype=np.float64):
        self.stride, self.pad = stride, pad
        fan_in = cin * kernel * kernel
        self.weight = params.add(f"{name}.weight", _he_init(rng, (cin, cout, kernel, kernel), fan_in, dtype))
        self.bias = params.add(f"{name}.bias", np.zeros(cout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight.tensor, self.bias.tensor, self.stride, self.pad)


class Linear:
    def __init__(self, params: ParamSet, name: str, fin: int, fout: int, rng, dtype=np.float64):
        self.weight = params.add(f"{name}.weight", _he_init(rng, (fin, fout), fin, dtype))
        self.bias = params.add(f"{name}.bias", np.zeros(fout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight.tensor)
        return T.add(out, T.channel_bias(self.bias.tensor, out.shape))


class InstanceNorm2d:
    def __init__(self, params: ParamSet, name: str, channels: int, dtype=np.float64, eps: float = 1e-5):
        self.eps = eps
        self.gamma = params.add(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = params.add(f"{name}.beta", np.zeros(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.instance_norm(x, self.gamma.tensor, self.beta.tensor, self.eps)


class Activation:
    def __init__(self, name: str, slope: float = 0.2):
        if name not in ACTIVATIONS:
            raise LayerSpecError(f"unknown activation {name!r}")
        self.name, self.slope = name, slope

    def __call__(self, x: Tensor) -> Tensor:
        if self.name == "identity":
            return x
        if self.name == "relu":
            return T.relu(x)
        if self.name == "leaky_relu":
            return T.leaky_relu(x, self.slope)
        if self.name == "sigmoid":
            return T.sigmoid(x)
        return T.tanh(x)


class Resize:
    def __init__(self, factor: int, mode: str):
        self.factor, self.mode = factor, mode

    def __call__(self, x: Tensor) -> Tensor:
        if self.mode == "up":
            return T.upsample_nearest(x, self.factor)
        return T.avg_pool(x, self.factor)


def build_layer(spec: LayerSpec, params: ParamSet, name: str, rng, dtype=np.float64):
    k = spec.kind
    if k == "conv":
        return Conv2d(params, name, spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.padding, rng, dtype)
    if k == "transposed-conv":
        return ConvTranspose2d(params, name, spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.padding, rng, dtype)
    if k == "linear":
        return Linear(params, name, spec.in_features, spec.out_features, rng, dtype)
    if k == "normalization":
        return InstanceNorm2d(params, name, spec.in_channels, dtype)
    if k == "activation":
        return Activation(spec.activation)
    if k == "resize":
        return Resize(spec.factor, spec.mode)
    raise LayerSpecError(f"layer kind {k!r} cannot be built standalone")
