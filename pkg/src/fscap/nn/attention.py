"""Self-attention over small sets, used to mix context encodings.

Blocks are pre-norm residual: x + attention(layernorm(x)). Inputs are
(batch, set_size, dim). The math is permutation equivariant: permuting
the rows of a set permutes the output rows the same way.
"""

from __future__ import annotations

import numpy as np

from .layers import MLP, Param, _check_mode

__all__ = [
    "AttentionBlock",
    "LayerNorm",
    "MultiHeadSelfAttention",
    "SelfAttentionStack",
    "self_attention",
]


class LayerNorm:
    """Normalization over the last axis with affine parameters."""

    def __init__(self, dim: int, name: str = "ln", eps: float = 1e-5,
                 dtype=np.float32):
        self.gamma = Param(f"{name}.gamma", np.ones(dim, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        _check_mode(mode)
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._ivar = 1.0 / np.sqrt(var + x.dtype.type(self.eps))
        self._xhat = (x - mean) * self._ivar
        return self.gamma.value * self._xhat + self.beta.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xhat, ivar = self._xhat, self._ivar
        d = grad.shape[-1]
        axes = tuple(range(grad.ndim - 1))
        self.gamma.grad += (grad * xhat).sum(axis=axes)
        self.beta.grad += grad.sum(axis=axes)
        g = grad * self.gamma.value
        return (ivar / d) * (
            d * g
            - g.sum(axis=-1, keepdims=True)
            - xhat * (g * xhat).sum(axis=-1, keepdims=True)
        )

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


class MultiHeadSelfAttention:
    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 name: str = "attn", dtype=np.float32):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        bound = np.sqrt(6.0 / dim)

        def proj(suffix: str) -> tuple[Param, Param]:
            w = rng.uniform(-bound, bound, size=(dim, dim)).astype(dtype)
            return (
                Param(f"{name}.{suffix}.weight", w),
                Param(f"{name}.{suffix}.bias", np.zeros(dim, dtype=dtype)),
            )

        self.wq, self.bq = proj("query")
        self.wk, self.bk = proj("key")
        self.wv, self.bv = proj("value")
        self.wo, self.bo = proj("out")

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        _check_mode(mode)
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ValueError(f"expected (batch, n, {self.dim}), got {x.shape}")
        q = _split_heads(x @ self.wq.value + self.bq.value, self.heads)
        k = _split_heads(x @ self.wk.value + self.bk.value, self.heads)
        v = _split_heads(x @ self.wv.value + self.bv.value, self.heads)
        scale = x.dtype.type(1.0 / np.sqrt(self.dim // self.heads))

        scores = (q @ k.swapaxes(-1, -2)) * scale
        scores = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)

        mixed = _merge_heads(attn @ v)
        self._cache = (x, q, k, v, attn, mixed, scale)
        return mixed @ self.wo.value + self.bo.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x, q, k, v, attn, mixed, scale = self._cache
        b, n, d = x.shape
        x2 = x.reshape(b * n, d)

        self.wo.grad += mixed.reshape(b * n, d).T @ grad.reshape(b * n, d)
        self.bo.grad += grad.sum(axis=(0, 1))
        dmixed = _split_heads(grad @ self.wo.value.T, self.heads)

        dattn = dmixed @ v.swapaxes(-1, -2)
        dv = attn.swapaxes(-1, -2) @ dmixed
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = (dscores @ k) * scale
        dk = (dscores.swapaxes(-1, -2) @ q) * scale

        dx = np.zeros_like(x)
        for dproj, w, bias in ((dq, self.wq, self.bq),
                               (dk, self.wk, self.bk),
                               (dv, self.wv, self.bv)):
            flat = _merge_heads(dproj).reshape(b * n, d)
            w.grad += x2.T @ flat
            bias.grad += flat.sum(axis=0)
            dx += (flat @ w.value.T).reshape(b, n, d)
        return dx

    def params(self) -> list[Param]:
        return [self.wq, self.bq, self.wk, self.bk,
                self.wv, self.bv, self.wo, self.bo]


class AttentionBlock:
    """Pre-norm residual block: x + attention(layernorm(x))."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 name: str = "block", dtype=np.float32):
        self.norm = LayerNorm(dim, name=f"{name}.norm", dtype=dtype)
        self.attn = MultiHeadSelfAttention(
            dim, heads, rng, name=f"{name}.attn", dtype=dtype
        )

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        return x + self.attn.forward(self.norm.forward(x, mode, rng), mode, rng)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad + self.norm.backward(self.attn.backward(grad))

    def params(self) -> list[Param]:
        return self.norm.params() + self.attn.params()


class SelfAttentionStack(MLP):
    def __init__(self, dim: int, n_layers: int, heads: int,
                 rng: np.random.Generator, name: str = "attention",
                 dtype=np.float32):
        super().__init__(
            AttentionBlock(dim, heads, rng, name=f"{name}.{i}", dtype=dtype)
            for i in range(n_layers)
        )


def self_attention(stack: SelfAttentionStack, inputs: np.ndarray) -> np.ndarray:
    """Run one unbatched (n, dim) set through the stack."""
    return stack.forward(inputs[None], "eval")[0]
