"""SGD with momentum/weight decay and the polynomial LR schedule."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .tensor import Tensor


def make_velocity(params: Sequence[Tensor]) -> List[np.ndarray]:
    return [np.zeros_like(p.data) for p in params]


def sgd_step(params: Sequence[Tensor], lr: float, momentum: float,
             weight_decay: float, velocity: Sequence[np.ndarray]) -> None:
    """v <- momentum*v + grad + wd*param; param <- param - lr*v; grads zeroed.

    Updates are in place so parameter arrays keep their identity across
    steps (checkpoint/EMA code relies on that).
    """
    if len(params) != len(velocity):
        raise ValueError(f"sgd_step: {len(params)} params but {len(velocity)} velocity buffers")
    for i, (p, v) in enumerate(zip(params, velocity)):
        if p.grad is None:
            raise ValueError(f"sgd_step: parameter {i} has no gradient")
        if v.shape != p.data.shape:
            raise ValueError(f"sgd_step: velocity {v.shape} does not match param {p.data.shape}")
        v *= momentum
        v += p.grad
        v += weight_decay * p.data
        p.data -= lr * v
        p.grad = None


def poly_lr(step: int, max_steps: int, lr0: float, power: float) -> float:
    """lr0 * (1 - step/max_steps)**power, linear decay at power 1."""
    if max_steps <= 0:
        raise ValueError(f"poly_lr: max_steps must be positive, got {max_steps}")
    if step < 0 or step > max_steps:
        raise ValueError(f"poly_lr: step {step} outside [0, {max_steps}]")
    return lr0 * (1.0 - step / max_steps) ** power
