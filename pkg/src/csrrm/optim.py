"""Parameter update rules: adaptive loss-over-gradient-norm steps capped
at a maximum learning rate, a plain SGD baseline, and freeze masks for
staged training.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["NonFiniteError", "AligOptimizer", "SgdOptimizer"]


class NonFiniteError(RuntimeError):
    """Loss or gradients stopped being finite; the update was refused."""


class _BaseOptimizer:
    def __init__(self, params: dict[str, Tensor]) -> None:
        self.params = dict(params)
        self.frozen: set[str] = set()

    def freeze(self, names) -> None:
        unknown = set(names) - self.params.keys()
        if unknown:
            raise KeyError(f"cannot freeze unknown parameters: {sorted(unknown)}")
        self.frozen.update(names)

    def unfreeze(self, names) -> None:
        self.frozen.difference_update(names)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _active(self):
        return [
            (name, p) for name, p in self.params.items() if name not in self.frozen
        ]

    def _check_grads(self, active) -> None:
        for name, p in active:
            if not np.isfinite(p.grad).all():
                raise NonFiniteError(f"non-finite gradient in parameter {name!r}")


class AligOptimizer(_BaseOptimizer):
    """Adaptive step min(max_lr, loss / (|grad|^2 + delta)) along -grad.

    The gradient norm is global over all unfrozen parameters. Optional
    heavy-ball momentum is off by default.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        max_lr: float = 0.1,
        delta: float = 1e-8,
        momentum: float = 0.0,
    ) -> None:
        if max_lr <= 0.0:
            raise ValueError(f"max_lr must be positive, got {max_lr}")
        if delta <= 0.0:
            raise ValueError(f"delta must be positive, got {delta}")
        super().__init__(params)
        self.max_lr = float(max_lr)
        self.delta = float(delta)
        self.momentum = float(momentum)
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, loss_value: float) -> float:
        """Apply one update; returns the step size used (always <= max_lr)."""
        loss_value = float(loss_value)
        if not np.isfinite(loss_value):
            raise NonFiniteError(f"non-finite loss {loss_value}")
        if loss_value < 0.0:
            raise ValueError(f"loss must be non-negative, got {loss_value}")
        active = self._active()
        self._check_grads(active)
        grad_sq = sum(float((p.grad * p.grad).sum()) for _, p in active)
        step = min(self.max_lr, loss_value / (grad_sq + self.delta))
        for name, p in active:
            if self.momentum:
                v = self._velocity.get(name)
                if v is None:
                    v = np.zeros_like(p.value)
                v = self.momentum * v + step * p.grad
                self._velocity[name] = v
                p.value -= v
            else:
                p.value -= step * p.grad
        return step


class SgdOptimizer(_BaseOptimizer):
    """Plain gradient descent baseline with a fixed learning rate."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.1) -> None:
        if lr < 0.0:
            raise ValueError(f"lr must be non-negative, got {lr}")
        super().__init__(params)
        self.lr = float(lr)

    def step(self, loss_value: float | None = None) -> float:
        if loss_value is not None and not np.isfinite(float(loss_value)):
            raise NonFiniteError(f"non-finite loss {loss_value}")
        active = self._active()
        self._check_grads(active)
        for _, p in active:
            p.value -= self.lr * p.grad
        return self.lr
