"""Minimal dense-tensor autodiff and the layer zoo used by the belief models."""

from . import tensor
from .gradcheck import grad_check
from .layers import LayerSpec, LayerSpecError, Param, ParamSet
from .network import Sequential, backward, forward, set_finite_checks
from .optim import AdamHyper, adam_step
from .tensor import NonFiniteError, Tensor, grad, no_grad

__all__ = [
    "tensor",
    "Tensor",
    "grad",
    "no_grad",
    "NonFiniteError",
    "LayerSpec",
    "LayerSpecError",
    "Param",
    "ParamSet",
    "Sequential",
    "forward",
    "backward",
    "set_finite_checks",
    "AdamHyper",
    "adam_step",
    "grad_check",
]
