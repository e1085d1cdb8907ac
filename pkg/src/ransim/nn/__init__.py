"""Minimal float64 autodiff, layers, losses, Adam and checkpoint IO."""
from .autodiff import Tensor, concat, cross_entropy, mse, softmax, stack
from .checkpoint import CheckpointError, load_params, save_params
from .layers import (
    LSTM, FeedForward, LayerNorm, Linear, MultiHeadAttention, attention,
    dropout, ffn, lstm_cell, multi_head, positional_encoding, xavier_uniform,
)
from .optim import AdamState, adam_step, grad_check

__all__ = [
    "Tensor", "concat", "stack", "softmax", "mse", "cross_entropy",
    "Linear", "LayerNorm", "MultiHeadAttention", "FeedForward", "LSTM",
    "attention", "multi_head", "ffn", "lstm_cell", "dropout",
    "positional_encoding", "xavier_uniform",
    "AdamState", "adam_step", "grad_check",
    "save_params", "load_params", "CheckpointError",
]
