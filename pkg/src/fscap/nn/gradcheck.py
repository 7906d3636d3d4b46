"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .layers import Param

__all__ = ["GradCheckReport", "gradient_check"]


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: int
    per_param: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        lines = [
            f"{verdict}: max relative error {self.max_rel_error:.3e} "
            f"(tolerance {self.tolerance:g}) "
            f"at {self.worst_param}[{self.worst_index}]"
        ]
        for name, err in self.per_param.items():
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def gradient_check(
    closure: Callable[[], float],
    params: Sequence[Param],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``closure`` must zero the grads, run a deterministic forward and
    backward pass (use "frozen" mode so dropout is off and batch-norm
    statistics do not drift), and return the loss. Each checked entry is
    perturbed by +-h and the relative error
    |analytic - numeric| / max(|analytic|, |numeric|, floor) recorded.
    Pass max_entries_per_param with an rng to subsample large tensors.

    Parameters should be float64 so the h^2 truncation error sits far
    below the tolerance. The floor is the magnitude under which a
    gradient counts as structurally zero. Some parameters have a true
    gradient of exactly zero (a bias feeding batch normalization, an
    attention key bias: softmax is shift invariant), where the
    difference quotient is pure rounding noise of order
    eps * |loss| / (2h); the floor keeps that noise from reading as
    relative error 1 while staying orders of magnitude below any real
    gradient signal.
    """
    closure()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    worst_param = ""
    worst_index = -1
    per_param: dict[str, float] = {}

    for p, grads in zip(params, analytic):
        flat_value = p.value.reshape(-1)
        flat_grad = grads.reshape(-1)
        n = flat_value.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            if rng is None:
                raise ValueError("subsampling entries needs an rng")
            entries = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            entries = range(n)

        p_worst = 0.0
        for j in entries:
            original = flat_value[j]
            flat_value[j] = original + h
            loss_plus = closure()
            flat_value[j] = original - h
            loss_minus = closure()
            flat_value[j] = original
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            a = flat_grad[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if err > p_worst:
                p_worst = err
            if err > worst:
                worst, worst_param, worst_index = err, p.name, int(j)
        per_param[p.name] = p_worst

    # the closure mutated grads during FD evaluations; restore analytic ones
    for p, grads in zip(params, analytic):
        p.grad[...] = grads
    return GradCheckReport(worst, worst_param, worst_index, per_param, tolerance)
