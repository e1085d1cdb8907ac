"""Channel realizations and rate/power formulas.

Rates follow the Shannon form for broadband traffic and the short-blocklength
normal approximation for low-latency traffic: the dispersion penalty is taken
in bits per channel use and scaled by the RB bandwidth, with n = tti * rb_bw
channel uses per mini-slot.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, erfcinv

__all__ = [
    "ChannelRealization",
    "PowerGrid",
    "FeasibilityReport",
    "sample_channel",
    "effective_gain",
    "embb_rate",
    "urllc_rate",
    "q_func",
    "q_inv",
    "check_power_feasible",
]


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray        # complex, last axis = antennas
    large_scale: float
    rician: float

    @property
    def gain(self) -> np.ndarray:
        return effective_gain(self.h)


def los_steering(k: int, angle: float) -> np.ndarray:
    """Deterministic unit-norm phase ramp for a K-antenna array."""
    phases = np.pi * np.arange(k) * np.sin(angle)
    return np.exp(1j * phases) / np.sqrt(k)


def sample_channel(large_scale: float, rician: float, k: int,
                   rng: np.random.Generator, angle: float = 0.0,
                   size: tuple = ()) -> ChannelRealization:
    """Rician fading draw: LoS phase ramp plus iid complex Gaussian scatter.

    ``size`` prepends batch dimensions (e.g. sub-bands); the LoS component is
    shared across the batch while the scattered part is redrawn.  Both
    components carry unit expected power so E[gain] equals the large-scale
    factor for every Rician factor.
    """
    if large_scale < 0 or rician < 0:
        raise ValueError("large_scale and rician factors must be nonnegative")
    if k < 1:
        raise ValueError("need at least one antenna")
    shape = tuple(size) + (k,)
    los = np.broadcast_to(los_steering(k, angle), shape)
    scatter = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
        / np.sqrt(2.0 * k)
    if np.isinf(rician):
        h = np.sqrt(large_scale) * los.copy()
    else:
        h = np.sqrt(large_scale) * (
            np.sqrt(rician / (rician + 1.0)) * los
            + np.sqrt(1.0 / (rician + 1.0)) * scatter)
    return ChannelRealization(h=h, large_scale=large_scale, rician=rician)


def effective_gain(h: np.ndarray) -> np.ndarray:
    """Squared 2-norm over the antenna axis."""
    h = np.asarray(h)
    return (np.abs(h) ** 2).sum(axis=-1)


def embb_rate(p: np.ndarray, g: np.ndarray, rb_bw: float,
              noise: float) -> float:
    """Shannon rate in bit/s summed over sub-bands."""
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    if (p < 0).any():
        raise ValueError("power must be nonnegative")
    return float(np.sum(rb_bw * np.log2(1.0 + p * g / noise)))


def urllc_rate(p: np.ndarray, g: np.ndarray, rb_bw: float, tti: float,
               error_prob: float, psi: np.ndarray, noise: float,
               dispersion: float = 1.0) -> float:
    """Finite-blocklength rate in bit/s summed over sub-bands.

    Each assigned RB contributes rb_bw * (log2(1+snr) - qinv*sqrt(V/(tti*rb_bw)))
    clamped at zero; unassigned RBs contribute nothing.
    """
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if (p < 0).any():
        raise ValueError("power must be nonnegative")
    snr = p * g / noise
    penalty = q_inv(error_prob) * np.sqrt(dispersion / (tti * rb_bw))
    per_rb = rb_bw * (np.log2(1.0 + snr) - psi * penalty)
    per_rb = np.where(psi > 0, np.maximum(per_rb, 0.0), 0.0)
    return float(per_rb.sum())


def q_func(x):
    """Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def q_inv(p: float) -> float:
    """Inverse Gaussian Q-function."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"q_inv requires p in (0, 1), got {p}")
    return float(np.sqrt(2.0) * erfcinv(2.0 * p))


@dataclass
class FeasibilityReport:
    violations: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def add(self, msg: str):
        self.violations.append(msg)


@dataclass
class PowerGrid:
    """Per-mini-slot RB assignment and power over (RU, sub-band, UE)."""

    psi_em: np.ndarray   # (E, O_em, U) binary
    psi_ur: np.ndarray   # (E, O_ur, U) binary
    p_em: np.ndarray     # (E, O_em, U) watts
    p_ur: np.ndarray     # (E, O_ur, U) watts

    @classmethod
    def zeros(cls, num_rus: int, o_em: int, o_ur: int, num_ues: int
              ) -> "PowerGrid":
        return cls(psi_em=np.zeros((num_rus, o_em, num_ues)),
                   psi_ur=np.zeros((num_rus, o_ur, num_ues)),
                   p_em=np.zeros((num_rus, o_em, num_ues)),
                   p_ur=np.zeros((num_rus, o_ur, num_ues)))


_TOL = 1e-9


def check_power_feasible(grid: PowerGrid, p_max: float, noise: float,
                         snr_floor: float,
                         gains_ur: np.ndarray | None = None
                         ) -> FeasibilityReport:
    """Verify power bounds, the low-latency SNR floor, the per-RU budget and
    RB orthogonality; every violated clause is reported with its indices."""
    rep = FeasibilityReport()
    tol = _TOL * max(1.0, p_max)

    for name, psi, p in (("em", grid.psi_em, grid.p_em),
                         ("ur", grid.psi_ur, grid.p_ur)):
        bad = np.argwhere(p < -tol)
        for e, o, u in bad:
            rep.add(f"negative {name} power at (ru={e}, sb={o}, ue={u})")
        bad = np.argwhere(p > psi * p_max + tol)
        for e, o, u in bad:
            rep.add(f"{name} power above psi*p_max at (ru={e}, sb={o}, ue={u})")

    if gains_ur is not None and grid.psi_ur.size:
        g = np.asarray(gains_ur, dtype=float)
        floor = np.where(grid.psi_ur > 0,
                         noise * snr_floor / np.maximum(g, 1e-300), 0.0)
        bad = np.argwhere(grid.p_ur < floor * (1.0 - _TOL))
        for e, o, u in bad:
            rep.add(f"ur power below snr floor at (ru={e}, sb={o}, ue={u})")

    total = grid.p_em.sum(axis=(1, 2)) + grid.p_ur.sum(axis=(1, 2))
    for e in np.argwhere(total > p_max + tol).ravel():
        rep.add(f"per-RU power budget exceeded at ru={e} "
                f"(sum={total[e]:.6g} > {p_max:.6g})")

    for name, psi in (("em", grid.psi_em), ("ur", grid.psi_ur)):
        occupancy = psi.sum(axis=2)
        for e, o in np.argwhere(occupancy > 1 + _TOL):
            rep.add(f"orthogonality violated on {name} (ru={e}, sb={o})")

    return rep
