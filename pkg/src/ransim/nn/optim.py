"""Adam optimizer and finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["AdamState", "adam_step", "grad_check"]


class AdamState:
    """Per-parameter moment estimates for bias-corrected Adam."""

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def adam_step(state: AdamState) -> None:
    """One in-place update; parameters with no gradient are skipped."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in state.params.items():
        if p.grad is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad ** 2
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def grad_check(f, params: dict, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` takes no arguments, reads ``params`` and returns a scalar Tensor.
    Relative error per coordinate is |ad - fd| / max(|fd|, 1e-8).
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None
                    else np.zeros_like(p.data))
                for k, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            ad = analytic[name].ravel()[i]
            err = abs(ad - fd) / max(abs(fd), 1e-8)
            worst = max(worst, err)
    return worst
