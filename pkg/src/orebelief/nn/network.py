"""Sequential networks with construction-time shape validation."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import LayerSpec, LayerSpecError, ParamSet, build_layer
from .tensor import Tensor

_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-layer NaN/Inf detection (on by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Sequential:
    """A single-input chain of layers built from LayerSpecs.

    The declared input shape (without batch axis) is threaded through
    every spec at construction time, so any shape mismatch fails before
    a single array is allocated.
    """

    def __init__(self, specs, in_shape, rng, params: ParamSet | None = None, name: str = "net", dtype=np.float64):
        self.specs = list(specs)
        self.in_shape = tuple(in_shape)
        self.params = params if params is not None else ParamSet()
        self.layers = []
        shape = self.in_shape
        self.shapes = [shape]
        for i, spec in enumerate(self.specs):
            if spec.kind == "concat":
                raise LayerSpecError("concat layers need a side input; use a composite module")
            shape = spec.out_shape(shape)
            self.shapes.append(shape)
            self.layers.append(build_layer(spec, self.params, f"{name}.{i}", rng, dtype))
        self.out_shape = shape

    def __call__(self, x: Tensor) -> Tensor:
        x = Tensor.of(x)
        if tuple(x.shape[1:]) != self.in_shape:
            raise ValueError(f"input shape {tuple(x.shape[1:])} does not match declared {self.in_shape}")
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if _FINITE_CHECKS:
                x.assert_finite(f"layer {i} output")
        return x


def forward(network: Sequential, x) -> Tensor:
    """Run the network, recording what backward needs."""
    return network(Tensor.of(x))


def backward(network: Sequential, loss: Tensor) -> None:
    """Populate every parameter's gradient buffer from a scalar loss.

    Raises if the loss does not depend on a recorded forward pass.
    """
    if loss._vjp is None and not loss._parents:
        raise ValueError("backward called without a recorded forward pass")
    network.params.zero_grad()
    loss.backward()
