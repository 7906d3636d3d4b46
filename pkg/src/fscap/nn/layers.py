"""Dense network building blocks on numpy arrays.

Every layer implements forward(x, mode, rng) and backward(grad), caching
whatever the backward pass needs. Three modes:

* "train": batch statistics, running-stat updates, live dropout.
* "eval": running statistics, dropout off.
* "frozen": batch statistics but no running-stat updates and dropout off.
  This is the mode gradient checks run in, so repeated forwards are
  deterministic while the batch-norm math matches training.

Gradients accumulate into Param.grad; call zero_grad between steps.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "MODES",
    "BatchNorm",
    "Dropout",
    "Linear",
    "MLP",
    "Param",
    "ReLU",
    "ShapeError",
    "mlp_forward",
    "mse_loss",
]

MODES = ("train", "eval", "frozen")


class ShapeError(ValueError):
    pass


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")


class Param:
    """A tensor with an accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Param({self.name}, shape={self.value.shape})"


class Linear:
    """y = x @ weight + bias, weight uniform in +-sqrt(6 / fan_in)."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 name: str = "linear", dtype=np.float32):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(fan_out, dtype=dtype))
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        _check_mode(mode)
        if x.shape[-1] != self.weight.value.shape[0]:
            raise ShapeError(
                f"{self.weight.name}: input width {x.shape[-1]} != "
                f"fan_in {self.weight.value.shape[0]}"
            )
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._x
        self.weight.grad += x.T @ grad
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value.T

    def params(self) -> list[Param]:
        return [self.weight, self.bias]


class ReLU:
    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        _check_mode(mode)
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad, 0)

    def params(self) -> list[Param]:
        return []


class Dropout:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout p must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        _check_mode(mode)
        if mode != "train" or self.p == 0.0:
            self._scaled_mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = rng.random(x.shape) >= self.p
        self._scaled_mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.p)
        return x * self._scaled_mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._scaled_mask is None:
            return grad
        return grad * self._scaled_mask

    def params(self) -> list[Param]:
        return []


class BatchNorm:
    """Per-feature normalization with affine parameters and running stats.

    Normalization uses the biased batch variance. Running statistics are
    exponential moving averages with momentum 0.1 and update only in
    "train" mode; "eval" normalizes with the running statistics.
    """

    def __init__(self, features: int, name: str = "bn", momentum: float = 0.1,
                 eps: float = 1e-5, dtype=np.float32):
        self.gamma = Param(f"{name}.gamma", np.ones(features, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(features, dtype=dtype))
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        _check_mode(mode)
        if mode == "eval":
            mean = self.running_mean
            var = self.running_var
        else:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            if mode == "train":
                m = x.dtype.type(self.momentum)
                self.running_mean = (1 - m) * self.running_mean + m * mean
                self.running_var = (1 - m) * self.running_var + m * var
        self._ivar = 1.0 / np.sqrt(var + x.dtype.type(self.eps))
        self._xhat = (x - mean) * self._ivar
        self._batch_stats = mode != "eval"
        return self.gamma.value * self._xhat + self.beta.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xhat, ivar = self._xhat, self._ivar
        self.gamma.grad += (grad * xhat).sum(axis=0)
        self.beta.grad += grad.sum(axis=0)
        if not self._batch_stats:
            return grad * self.gamma.value * ivar
        n = grad.shape[0]
        g = grad * self.gamma.value
        return (ivar / n) * (
            n * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0)
        )

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]


class MLP:
    """A plain sequence of layers sharing the forward/backward protocol."""

    def __init__(self, layers: Sequence):
        self.layers = list(layers)

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, mode, rng)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self) -> list[Param]:
        out: list[Param] = []
        for layer in self.layers:
            out.extend(layer.params())
        return out


def mlp_forward(mlp: MLP, x: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None) -> np.ndarray:
    return mlp.forward(x, mode, rng)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to pred."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype)
