"""Adam optimizer over a ParamSet."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ParamSet
from .tensor import NonFiniteError


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: ParamSet, hyper: AdamHyper) -> None:
    """One bias-corrected Adam update, in place; skips zero-size gradients.

    Parameters with no populated gradient buffer are an error: the step
    must follow a backward pass.
    """
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    for p in params:
        g = p.tensor.grad
        if g is None:
            raise ValueError(f"adam_step before backward: no gradient for {p.name!r}")
        p.m *= hyper.beta1
        p.m += (1.0 - hyper.beta1) * g
        p.v *= hyper.beta2
        p.v += (1.0 - hyper.beta2) * np.square(g)
        update = (hyper.lr / c1) * p.m / (np.sqrt(p.v / c2) + hyper.eps)
        if not np.all(np.isfinite(update)):
            raise NonFiniteError(f"non-finite Adam update for {p.name!r}")
        p.tensor.data = p.tensor.data - update.astype(p.tensor.data.dtype)
