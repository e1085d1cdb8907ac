"""Frame-scale demand and route forecasting.

A shared Transformer encoder reads a T-frame window of per-UE features
(broadband demand, low-latency demand, one-hot route) after reversible
instance normalization, and three heads predict next-frame broadband demand,
low-latency demand, and the route class.  Demand heads are denormalized back
to packet rates and clamped at zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    AdamState, FeedForward, LayerNorm, Linear, MultiHeadAttention, Tensor,
    adam_step, cross_entropy, dropout, mse, positional_encoding,
)

__all__ = [
    "RevinStats",
    "ForecastModel",
    "Forecast",
    "revin_normalize",
    "revin_denormalize",
    "build_lsp_input",
    "make_windows",
    "train_forecaster",
    "forecast",
    "persistence_mse",
    "evaluate_forecaster",
]

D_MODEL = 64
N_LAYERS = 6
N_HEADS = 8
D_FFN = 512
P_DROP = 0.3


@dataclass
class RevinStats:
    """Per-feature statistics captured by the normalization pass."""

    mu: np.ndarray          # (F,)
    sigma: np.ndarray       # (F,), population convention, floored at eps
    gamma_aff: np.ndarray   # (F,) learnable-style affine scale (default 1)
    beta_aff: np.ndarray    # (F,) affine shift (default 0)
    eps: float


def revin_normalize(x: np.ndarray, gamma_aff=None, beta_aff=None,
                    eps: float = 1e-12):
    """Normalize (batch, time, features) per feature over batch and time.

    Returns (x_norm, stats).  The eps floor keeps zero-variance features
    finite and is small enough that the round trip inverts to 1e-9.
    """
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError("input to normalization must be finite")
    f = x.shape[-1]
    gamma_aff = np.ones(f) if gamma_aff is None else np.asarray(gamma_aff)
    beta_aff = np.zeros(f) if beta_aff is None else np.asarray(beta_aff)
    axes = tuple(range(x.ndim - 1))
    mu = x.mean(axis=axes)
    raw_std = x.std(axis=axes)
    sigma = np.maximum(raw_std, eps)
    stats = RevinStats(mu=mu, sigma=sigma, gamma_aff=gamma_aff,
                       beta_aff=beta_aff, eps=eps)
    x_norm = gamma_aff * (x - mu) / sigma + beta_aff
    # a constant feature normalizes to beta exactly instead of amplifying
    # the rounding noise of (x - mu) by 1/eps
    const = raw_std <= 1e-12 * np.maximum(np.abs(mu), 1.0)
    if const.any():
        x_norm = np.where(const, beta_aff, x_norm)
    return x_norm, stats


def revin_denormalize(y: np.ndarray, stats: RevinStats,
                      feature=None) -> np.ndarray:
    """Invert the normalization; ``feature`` selects a single feature index
    when ``y`` carries just that channel."""
    if stats is None:
        raise ValueError("denormalization requires the paired stats")
    sel = slice(None) if feature is None else feature
    y_hat = (np.asarray(y, dtype=float) - stats.beta_aff[sel]) \
        / (stats.gamma_aff[sel] + stats.eps)
    return y_hat * stats.sigma[sel] + stats.mu[sel]


def build_lsp_input(history: list, window: int, t: int,
                    num_ues: int, num_rus: int) -> np.ndarray:
    """Window of the ``window`` most recent frames as (U, T, 2 + E).

    ``history`` holds (omega_em, omega_ur, route_index) triples for decided
    frames 1..t-1.  Missing frames (start of a run) contribute zero demand
    and a uniform route feature 1/E.
    """
    if t < 1:
        raise ValueError("frame index starts at 1")
    f = 2 + num_rus
    x = np.zeros((num_ues, window, f))
    x[:, :, 2:] = 1.0 / num_rus
    avail = history[max(0, t - 1 - window):t - 1]
    for k, (om_em, om_ur, route) in enumerate(reversed(avail)):
        col = window - 1 - k
        x[:, col, 0] = om_em
        x[:, col, 1] = om_ur
        x[:, col, 2:] = 0.0
        x[np.arange(num_ues), col, 2 + np.asarray(route, dtype=int)] = 1.0
    return x


def make_windows(frames: list, window: int, num_rus: int):
    """Turn a frame list [(om_em, om_ur, route), ...] into training pairs.

    Each sample pairs the window ending at frame k with frame k+1's demands
    and routes; UEs become batch rows downstream.
    """
    xs, y_em, y_ur, y_route = [], [], [], []
    num_ues = len(frames[0][0])
    for k in range(window, len(frames)):
        xs.append(build_lsp_input(frames, window, k + 1, num_ues, num_rus))
        om_em, om_ur, route = frames[k]
        y_em.append(np.asarray(om_em, dtype=float))
        y_ur.append(np.asarray(om_ur, dtype=float))
        y_route.append(np.asarray(route, dtype=int))
    return (np.stack(xs), np.stack(y_em), np.stack(y_ur), np.stack(y_route))


class _EncoderLayer:
    """Post-norm residual block: attention then position-wise network."""

    def __init__(self, rng: np.random.Generator):
        self.mha = MultiHeadAttention(D_MODEL, N_HEADS, rng)
        self.ln1 = LayerNorm(D_MODEL)
        self.ffn = FeedForward(D_MODEL, D_FFN, rng, activation="gelu")
        self.ln2 = LayerNorm(D_MODEL)

    def __call__(self, h, rng, train):
        h = self.ln1(h + dropout(self.mha(h), P_DROP, rng, train))
        h = self.ln2(h + dropout(self.ffn(h), P_DROP, rng, train))
        return h

    def params(self, prefix):
        return {**self.mha.params(f"{prefix}.mha"),
                **self.ln1.params(f"{prefix}.ln1"),
                **self.ffn.params(f"{prefix}.ffn"),
                **self.ln2.params(f"{prefix}.ln2")}


class ForecastModel:
    """Shared encoder with demand and route heads."""

    def __init__(self, num_rus: int, window: int, seed: int = 0,
                 n_layers: int = N_LAYERS):
        rng = np.random.default_rng(seed)
        self.num_rus = num_rus
        self.window = window
        f_in = 2 + num_rus
        self.embed = Linear(f_in, D_MODEL, rng)
        self.pe = positional_encoding(window, D_MODEL)
        self.blocks = [_EncoderLayer(rng) for _ in range(n_layers)]
        self.head_em = Linear(D_MODEL, 1, rng)
        self.head_ur = Linear(D_MODEL, 1, rng)
        self.head_route = Linear(D_MODEL, num_rus, rng)

    def __call__(self, x: np.ndarray, rng=None, train: bool = False):
        """x: (rows, T, F) normalized input; returns (em, ur, route logits)."""
        h = self.embed(Tensor(x)) + Tensor(self.pe)
        h = dropout(h, P_DROP, rng, train)
        for block in self.blocks:
            h = block(h, rng, train)
        last = h[:, -1, :]
        em = self.head_em(last)[:, 0]
        ur = self.head_ur(last)[:, 0]
        logits = self.head_route(last)
        return em, ur, logits

    def params(self) -> dict:
        out = {**self.embed.params("embed"),
               **self.head_em.params("head_em"),
               **self.head_ur.params("head_ur"),
               **self.head_route.params("head_route")}
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"enc{i}"))
        return out

    def load(self, table: dict):
        for name, p in self.params().items():
            if name not in table:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            if table[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for '{name}'")
            p.data = table[name].astype(np.float64)


def _norm_targets(y, stats, feature):
    return stats.gamma_aff[feature] * (y - stats.mu[feature]) \
        / stats.sigma[feature] + stats.beta_aff[feature]


def train_forecaster(dataset, model: ForecastModel, epochs: int = 10,
                     lr: float = 1e-4, batch_size: int = 32,
                     seed: int = 0, log=None):
    """Minimize mse_em + mse_ur + ce_route with Adam.

    ``dataset`` is the tuple from ``make_windows``.  Returns the per-epoch
    log rows; ``log`` may be a writable text stream receiving CSV lines
    ``epoch,loss_em,loss_ur,loss_route,acc_route``.
    """
    xs, y_em, y_ur, y_route = dataset
    if len(xs) == 0:
        raise ValueError("empty training dataset")
    n_samples, num_ues = xs.shape[0], xs.shape[1]
    rows_x = xs.reshape(n_samples * num_ues, xs.shape[2], xs.shape[3])
    rows_em = y_em.reshape(-1)
    rows_ur = y_ur.reshape(-1)
    rows_route = y_route.reshape(-1)

    order_rng = np.random.default_rng(seed)
    drop_rng = np.random.default_rng(seed + 10_000)   # separate stream
    state = AdamState(model.params(), lr=lr)
    history = []
    if log is not None:
        log.write("epoch,loss_em,loss_ur,loss_route,acc_route\n")

    n_rows = len(rows_x)
    for epoch in range(epochs):
        perm = order_rng.permutation(n_rows)
        sums = np.zeros(3)
        correct = 0
        for start in range(0, n_rows, batch_size):
            idx = perm[start:start + batch_size]
            xb, stats = revin_normalize(rows_x[idx])
            t_em = _norm_targets(rows_em[idx], stats, 0)
            t_ur = _norm_targets(rows_ur[idx], stats, 1)
            state.zero_grad()
            em, ur, logits = model(xb, rng=drop_rng, train=True)
            l_em = mse(em, t_em)
            l_ur = mse(ur, t_ur)
            l_route = cross_entropy(logits, rows_route[idx])
            loss = l_em + l_ur + l_route
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}: "
                    f"em={l_em.item()} ur={l_ur.item()} "
                    f"route={l_route.item()}")
            loss.backward()
            adam_step(state)
            k = len(idx)
            sums += k * np.array([l_em.item(), l_ur.item(), l_route.item()])
            correct += int((logits.data.argmax(axis=1)
                            == rows_route[idx]).sum())
        row = (epoch, *(sums / n_rows), correct / n_rows)
        history.append(row)
        if log is not None:
            log.write(f"{epoch},{row[1]:.6f},{row[2]:.6f},"
                      f"{row[3]:.6f},{row[4]:.6f}\n")
    return history


@dataclass
class Forecast:
    """Next-frame prediction per UE."""

    omega_em: np.ndarray   # pkt/s, >= 0
    omega_ur: np.ndarray   # pkt/s, >= 0
    route_logits: np.ndarray
    route: np.ndarray      # argmax RU index


def forecast(model: ForecastModel, x: np.ndarray) -> Forecast:
    """Run inference on one (U, T, F) window."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[2] != 2 + model.num_rus:
        raise ValueError(f"expected (U, T, {2 + model.num_rus}) input, "
                         f"got {x.shape}")
    xb, stats = revin_normalize(x)
    em, ur, logits = model(xb, train=False)
    om_em = np.maximum(revin_denormalize(em.data, stats, feature=0), 0.0)
    om_ur = np.maximum(revin_denormalize(ur.data, stats, feature=1), 0.0)
    return Forecast(omega_em=om_em, omega_ur=om_ur,
                    route_logits=logits.data.copy(),
                    route=logits.data.argmax(axis=1))


def persistence_mse(dataset) -> float:
    """Baseline demand MSE in pkt/s units: next frame = last observed."""
    xs, y_em, y_ur, _ = dataset
    err_em = (xs[:, :, -1, 0] - y_em) ** 2
    err_ur = (xs[:, :, -1, 1] - y_ur) ** 2
    return float(np.concatenate([err_em.ravel(), err_ur.ravel()]).mean())


def evaluate_forecaster(model: ForecastModel, dataset) -> dict:
    """Held-out demand MSE (pkt/s units) and route accuracy."""
    xs, y_em, y_ur, y_route = dataset
    errs = []
    correct = total = 0
    for i in range(len(xs)):
        fc = forecast(model, xs[i])
        errs.append((fc.omega_em - y_em[i]) ** 2)
        errs.append((fc.omega_ur - y_ur[i]) ** 2)
        correct += int((fc.route == y_route[i]).sum())
        total += len(y_route[i])
    return {"mse_demand": float(np.concatenate(errs).mean()),
            "acc_route": correct / total}
