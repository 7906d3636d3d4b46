"""Adam and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .layers import Param

__all__ = ["AdamState", "LRSchedule", "adam_step", "lr_at"]


@dataclass
class AdamState:
    """First/second moment slots plus the update counter.

    Moments are created lazily on the first step, zero-initialized, in
    the order the params are passed; every call must pass the same
    params in the same order.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Param], state: AdamState, lr: float) -> None:
    """One in-place Adam update from the params' accumulated grads."""
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise ValueError(
            f"optimizer state holds {len(state.m)} slots, got {len(params)} params"
        )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p.value -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.value.dtype)


@dataclass(frozen=True)
class LRSchedule:
    """Linear warmup then cosine anneal to zero.

    lr(step) for 0-based step:
      step <  warmup: base * (step + 1) / warmup
      step >= warmup: base * 0.5 * (1 + cos(pi * progress)) with
                      progress = (step - warmup) / (total - warmup)

    lr(warmup) is exactly base and lr(total) is exactly 0.
    """

    base_lr: float
    total_steps: int
    warmup_steps: int = 128

    def __post_init__(self):
        if self.base_lr < 0:
            raise ValueError(f"base_lr must be >= 0, got {self.base_lr}")
        if self.warmup_steps < 0 or self.total_steps <= 0:
            raise ValueError("steps must be positive")
        if self.warmup_steps > self.total_steps:
            raise ValueError(
                f"warmup {self.warmup_steps} exceeds total {self.total_steps}"
            )


def lr_at(schedule: LRSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(
            f"step {step} outside [0, {schedule.total_steps}]"
        )
    if step < schedule.warmup_steps:
        return schedule.base_lr * (step + 1) / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    if span == 0:
        return 0.0
    progress = (step - schedule.warmup_steps) / span
    return float(schedule.base_lr * 0.5 * (1.0 + np.cos(np.pi * progress)))
