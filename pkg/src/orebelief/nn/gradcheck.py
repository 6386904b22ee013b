"""Finite-difference gradient checking against the analytic backward pass."""

from __future__ import annotations

import numpy as np

from .layers import ParamSet
from .tensor import NonFiniteError


def grad_check(loss_fn, params: ParamSet, epsilon: float = 1e-6, max_coords_per_param: int | None = None, rng=None, atol: float = 1e-9) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` takes no arguments and returns a scalar Tensor computed
    from the current parameter values.  Relative error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).  Coordinates
    where both sides are below ``atol`` count as exact: central
    differences bottom out at ~|loss| * machine_eps / epsilon, so a
    truly zero gradient would otherwise read as noise over noise.
    Parameters should be 64-bit; epsilon must be positive.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {p.name: (p.tensor.grad.copy() if p.tensor.grad is not None else np.zeros_like(p.value)) for p in params}

    # central differences cannot resolve below the roundoff of the loss itself
    noise_floor = 8.0 * abs(loss.item()) * np.finfo(np.float64).eps / epsilon
    atol = max(atol, noise_floor)
    worst = 0.0
    for p in params:
        flat = p.tensor.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            picker = rng if rng is not None else np.random.default_rng(0)
            coords = picker.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        a_flat = analytic[p.name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = loss_fn().item()
            flat[i] = orig - epsilon
            f_minus = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError(f"non-finite loss while perturbing {p.name!r}")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = a_flat[i]
            if abs(a) <= atol and abs(numeric) <= atol:
                continue
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
