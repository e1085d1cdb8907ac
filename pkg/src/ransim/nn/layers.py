"""Layers shared by the frame-scale and mini-slot-scale models.

Everything is float64 and built from the autodiff primitives so analytic
gradients can be validated against central differences.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, softmax

__all__ = [
    "xavier_uniform",
    "Linear",
    "LayerNorm",
    "dropout",
    "positional_encoding",
    "attention",
    "multi_head",
    "MultiHeadAttention",
    "ffn",
    "FeedForward",
    "lstm_cell",
    "LSTM",
]


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Linear:
    """Affine map y = x W + b with Xavier-uniform W and zero b."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = Tensor(xavier_uniform(rng, d_in, d_out), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    """Normalization over the last axis with learned affine."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return self.gamma * (centered / (var + self.eps).sqrt()) + self.beta

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


def dropout(x: Tensor, p: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p <= 0.0:
        return x
    keep = 1.0 - p
    mask = (rng.random(x.shape) < keep) / keep
    return x * Tensor(mask)


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Interleaved sin/cos position code at base 10^4, shape (T, d)."""
    pos = np.arange(seq_len)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angle = pos / 10_000.0 ** (2 * i / d_model)
    pe = np.zeros((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention; leading axes are batch dims."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError("query/key depth mismatch")
    d_k = q.shape[-1]
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d_k))
    return softmax(scores) @ v


def multi_head(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
               heads: int) -> Tensor:
    """Multi-head attention over x of shape (..., T, d_model).

    The d_model x d_model projections are split into ``heads`` equal slices.
    """
    *batch, t, d = x.shape
    if d % heads != 0:
        raise ValueError(f"d_model {d} not divisible by {heads} heads")
    d_h = d // heads

    def split(z):
        # (..., T, d) -> (..., H, T, d_h)
        return z.reshape(*batch, t, heads, d_h).swapaxes(-2, -3)

    out = attention(split(x @ wq), split(x @ wk), split(x @ wv))
    out = out.swapaxes(-2, -3).reshape(*batch, t, d)
    return out @ wo


class MultiHeadAttention:
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by {heads}")
        self.heads = heads
        self.wq = Tensor(xavier_uniform(rng, d_model, d_model),
                         requires_grad=True)
        self.wk = Tensor(xavier_uniform(rng, d_model, d_model),
                         requires_grad=True)
        self.wv = Tensor(xavier_uniform(rng, d_model, d_model),
                         requires_grad=True)
        self.wo = Tensor(xavier_uniform(rng, d_model, d_model),
                         requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return multi_head(x, self.wq, self.wk, self.wv, self.wo, self.heads)

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
                f"{prefix}.wv": self.wv, f"{prefix}.wo": self.wo}


def ffn(z: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise two-layer network with a ReLU between."""
    return (z @ w1 + b1).relu() @ w2 + b2


class FeedForward:
    """Two-layer position-wise block; activation is configurable because the
    encoder uses GELU while the bare op contract is ReLU."""

    def __init__(self, d_model: int, d_hidden: int, rng: np.random.Generator,
                 activation: str = "gelu"):
        self.fc1 = Linear(d_model, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_model, rng)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        h = h.gelu() if self.activation == "gelu" else h.relu()
        return self.fc2(h)

    def params(self, prefix: str) -> dict:
        return {**self.fc1.params(f"{prefix}.fc1"),
                **self.fc2.params(f"{prefix}.fc2")}


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor,
              b: Tensor):
    """One gated recurrence step.

    Gate order in the stacked weights is input, forget, candidate, output.
    Returns (h', c').
    """
    hidden = h.shape[-1]
    z = x @ wx + h @ wh + b
    i = z[..., 0 * hidden:1 * hidden].sigmoid()
    f = z[..., 1 * hidden:2 * hidden].sigmoid()
    g = z[..., 2 * hidden:3 * hidden].tanh()
    o = z[..., 3 * hidden:4 * hidden].sigmoid()
    c_new = f * c + i * g
    h_new = o * c_new.tanh()
    return h_new, c_new


class LSTM:
    """Stacked LSTM over (batch, time, features) with inter-layer dropout."""

    def __init__(self, d_in: int, hidden: int, num_layers: int,
                 rng: np.random.Generator, p_drop: float = 0.0):
        self.hidden = hidden
        self.p_drop = p_drop
        self.layers = []
        for layer in range(num_layers):
            fan_in = d_in if layer == 0 else hidden
            wx = Tensor(xavier_uniform(rng, fan_in, 4 * hidden),
                        requires_grad=True)
            wh = Tensor(xavier_uniform(rng, hidden, 4 * hidden),
                        requires_grad=True)
            bias = np.zeros(4 * hidden)
            bias[hidden:2 * hidden] = 1.0   # forget gate starts open
            self.layers.append((wx, wh, Tensor(bias, requires_grad=True)))

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None,
                 train: bool = False) -> Tensor:
        """Returns the top layer's last hidden state, shape (batch, hidden)."""
        batch, t, _ = x.shape
        seq = [x[:, s, :] for s in range(t)]
        for li, (wx, wh, b) in enumerate(self.layers):
            h = Tensor(np.zeros((batch, self.hidden)))
            c = Tensor(np.zeros((batch, self.hidden)))
            out = []
            for step in seq:
                h, c = lstm_cell(step, h, c, wx, wh, b)
                out.append(h)
            if li < len(self.layers) - 1:
                out = [dropout(s, self.p_drop, rng, train) for s in out]
            seq = out
        return seq[-1]

    def params(self, prefix: str) -> dict:
        out = {}
        for li, (wx, wh, b) in enumerate(self.layers):
            out[f"{prefix}.l{li}.wx"] = wx
            out[f"{prefix}.l{li}.wh"] = wh
            out[f"{prefix}.l{li}.b"] = b
        return out
