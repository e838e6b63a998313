"""Minimal reverse-mode differentiation engine, layers, and optimizer."""

from . import tensor as ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, relative_error
from .nn import (
    BatchNorm, BiGRU, ConfigError, Conformer, ConformerBlock, Conv2d, DepthwiseConv1d,
    Dropout, FeedForward, GRU, LayerNorm, Linear, Module, MultiHeadAttention,
)
from .optim import Adam, AdamState, OptimizerError, adam_step, lr_schedule
from .tensor import ShapeError, Tensor, no_grad

__all__ = [
    "Adam", "AdamState", "BatchNorm", "BiGRU", "ConfigError", "Conformer", "ConformerBlock",
    "Conv2d", "DepthwiseConv1d", "Dropout", "FeedForward", "GRU", "LayerNorm", "Linear",
    "Module", "MultiHeadAttention", "OptimizerError", "ShapeError", "Tensor", "adam_step",
    "check_gradients", "load_checkpoint", "lr_schedule", "no_grad", "ops", "relative_error",
    "save_checkpoint",
]
