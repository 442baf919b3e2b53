"""Exponential-moving-average teacher weights.

The teacher is never trained by gradients; its parameters are a decayed
average of the student's, refreshed once per training step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

from .tensor import Tensor


@dataclass
class EmaState:
    decay: float
    teacher_params: List[Tensor] = field(default_factory=list)
    step_count: int = 0


def ema_init(student_params: Sequence[Tensor], decay: float = 0.999) -> EmaState:
    """Teacher starts as an exact copy of the student."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"ema_init: decay must be in [0, 1], got {decay}")
    teacher = [Tensor(p.data.copy(), requires_grad=False) for p in student_params]
    return EmaState(decay=decay, teacher_params=teacher)


def ema_update(state: EmaState, student_params: Sequence[Tensor]) -> None:
    """teacher <- decay*teacher + (1-decay)*student, elementwise in place."""
    if len(state.teacher_params) != len(student_params):
        raise ValueError(
            f"ema_update: {len(state.teacher_params)} teacher tensors vs "
            f"{len(student_params)} student tensors")
    d = state.decay
    for t, s in zip(state.teacher_params, student_params):
        if t.data.shape != s.data.shape:
            raise ValueError(f"ema_update: shape mismatch {t.data.shape} vs {s.data.shape}")
        t.data *= d
        t.data += (1.0 - d) * s.data
    state.step_count += 1
