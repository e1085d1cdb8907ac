"""Heuristic per-RU bandwidth split between the two service slices.

The split fraction follows the ratio of predicted low-latency to broadband
load, weighted by the inverse ratio of their latency tolerances, then clamped
so at least one broadband RB survives whenever broadband demand exists.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import BwpLayout, Scenario

__all__ = ["SliceDecision", "slice_bandwidth"]


@dataclass
class SliceDecision:
    """Fraction of each RU's carrier handed to the low-latency slice."""

    phi: np.ndarray            # (E,), in [phi_min, phi_max]
    layouts: list[BwpLayout]   # per RU


def slice_bandwidth(sc: Scenario, ur_load: np.ndarray, em_load: np.ndarray,
                    lat_th_em: float | None = None,
                    lat_th_ur: float | None = None) -> SliceDecision:
    """Split each RU's bandwidth from routed per-RU demands.

    ``ur_load`` and ``em_load`` are per-RU packet rates (pkt/s); both are
    converted to bit/s with their own packet sizes before the ratio so the
    result is dimensionless.  Zero low-latency load floors the split at
    phi_min = 0; zero broadband load pushes it to phi_max.
    """
    lat_em = sc.lat_th_em if lat_th_em is None else lat_th_em
    lat_ur = sc.lat_th_ur if lat_th_ur is None else lat_th_ur
    if lat_em <= 0 or lat_ur <= 0:
        raise ValueError("latency thresholds must be positive")
    ur_bps = np.asarray(ur_load, dtype=float) * sc.pkt_size_ur * 8.0
    em_bps = np.asarray(em_load, dtype=float) * sc.pkt_size_em * 8.0

    phi_min, phi_max = 0.0, sc.phi_max
    phi = np.empty(len(ur_bps))
    weight = lat_em / lat_ur
    for e in range(len(ur_bps)):
        if ur_bps[e] <= 0:
            phi[e] = phi_min
        elif em_bps[e] <= 0:
            phi[e] = phi_max
        else:
            phi[e] = np.clip(ur_bps[e] / em_bps[e] * weight,
                             phi_min, phi_max)
    layouts = [sc.layout(p) for p in phi]
    return SliceDecision(phi=phi, layouts=layouts)
