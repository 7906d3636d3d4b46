"""Minimal dense-network toolkit: layers, attention, Adam, grad checks."""

from .attention import (
    AttentionBlock,
    LayerNorm,
    MultiHeadSelfAttention,
    SelfAttentionStack,
    self_attention,
)
from .gradcheck import GradCheckReport, gradient_check
from .layers import (
    MODES,
    BatchNorm,
    Dropout,
    Linear,
    MLP,
    Param,
    ReLU,
    ShapeError,
    mlp_forward,
    mse_loss,
)
from .optim import AdamState, LRSchedule, adam_step, lr_at

__all__ = [
    "AdamState",
    "AttentionBlock",
    "BatchNorm",
    "Dropout",
    "GradCheckReport",
    "LRSchedule",
    "LayerNorm",
    "Linear",
    "MLP",
    "MODES",
    "MultiHeadSelfAttention",
    "Param",
    "ReLU",
    "SelfAttentionStack",
    "ShapeError",
    "adam_step",
    "gradient_check",
    "lr_at",
    "mlp_forward",
    "mse_loss",
    "self_attention",
]
