"""Central finite-difference gradient checking against the tape."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor


def numerical_gradient(
    f: Callable[[], float], param: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central differences of a scalar function w.r.t. ``param``, perturbed in place."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f()
        flat[i] = orig - step
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def sampled_max_relative_error(
    build_loss: Callable[[], "Tensor"],
    params: Sequence[Tensor],
    samples_per_param: int,
    rng: np.random.Generator,
    step: float = 1e-5,
) -> float:
    """Like :func:`max_relative_error` but checks only a random subset of
    elements per parameter; the only tractable option for whole networks."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        n = min(samples_per_param, flat.size)
        idx = rng.choice(flat.size, size=n, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(build_loss().value)
            flat[i] = orig - step
            f_minus = float(build_loss().value)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(a.reshape(-1)[i] - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst


def max_relative_error(
    build_loss: Callable[[], "Tensor"],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> float:
    """Worst-case |analytic - central| / (|central| + 1e-8) over all params.

    ``build_loss`` must rebuild the scalar loss from the current parameter
    values on every call; the numeric side only ever uses forward
    evaluations, so it stays independent of the backward pass it checks.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def forward_value() -> float:
        return float(build_loss().value)

    worst = 0.0
    for p, a in zip(params, analytic):
        numeric = numerical_gradient(forward_value, p.value, step)
        err = np.abs(a - numeric) / (np.abs(numeric) + 1e-8)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
