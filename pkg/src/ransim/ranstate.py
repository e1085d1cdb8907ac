"""Queues, routing bookkeeping, end-to-end latency and the scalarized objective.

Queue bookkeeping is done in whole bytes (numpy int64) so that the run-level
conservation identity  arrived == served + residual + dropped  holds exactly.
Rates are bit/s everywhere; division by 8 happens at the queue boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import BwpLayout, Scenario

__all__ = [
    "QueueState",
    "RoutingDecision",
    "LatencyBreakdown",
    "ConstraintReport",
    "UnboundedLatencyError",
    "update_queue",
    "e2e_latency",
    "first_drain_latency",
    "objective",
    "check_frame_constraints",
]

N_SERVICES = 2  # 0 = broadband, 1 = low latency


class UnboundedLatencyError(RuntimeError):
    """A routed low-latency flow received zero rate in every mini-slot."""


def update_queue(q: float, route_frac: float, omega: float, pkt_bytes: float,
                 served_rate: float, tti: float) -> float:
    """One mini-slot queue update in bytes.

    q' = max(q + route_frac*omega*pkt_bytes*tti - served_rate*tti/8, 0).
    """
    if min(q, route_frac, omega, pkt_bytes, served_rate, tti) < 0:
        raise ValueError("queue update inputs must be nonnegative")
    if route_frac > 1:
        raise ValueError("route fraction must not exceed 1")
    arrival = route_frac * omega * pkt_bytes * tti
    service = served_rate * tti / 8.0
    return max(q + arrival - service, 0.0)


@dataclass
class RoutingDecision:
    """Flow-split fractions per (RU, UE); binary selection follows R > 0."""

    r: np.ndarray  # (E, U), columns sum to 1

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if (r < 0).any() or (r > 1).any():
            raise ValueError("route fractions must lie in [0, 1]")
        if not np.allclose(r.sum(axis=0), 1.0, atol=1e-9):
            raise ValueError("route fractions must sum to 1 per UE")
        self.r = r

    @property
    def a(self) -> np.ndarray:
        return (self.r > 0).astype(int)

    @classmethod
    def uniform(cls, num_rus: int, num_ues: int) -> "RoutingDecision":
        return cls(np.full((num_rus, num_ues), 1.0 / num_rus))

    @classmethod
    def from_indices(cls, idx: np.ndarray, num_rus: int) -> "RoutingDecision":
        r = np.zeros((num_rus, len(idx)))
        r[np.asarray(idx, dtype=int), np.arange(len(idx))] = 1.0
        return cls(r)


class QueueState:
    """Integer-byte queues per (RU, UE, service) with admission drops."""

    def __init__(self, num_rus: int, num_ues: int, qmax_bytes: float):
        self.q = np.zeros((num_rus, num_ues, N_SERVICES), dtype=np.int64)
        self.qmax = int(qmax_bytes)
        self.arrived = 0
        self.served = 0
        self.dropped = 0

    def push(self, arrivals: np.ndarray) -> np.ndarray:
        """Admit per-(RU,UE,service) byte arrivals up to the per-RU cap.

        Lower UE indices are admitted first; the overflow is dropped.
        Returns the admitted amounts.
        """
        arrivals = np.asarray(arrivals, dtype=np.int64)
        self.arrived += int(arrivals.sum())
        room = self.qmax - self.q.sum(axis=1)          # (E, S)
        cum = np.cumsum(arrivals, axis=1)              # over UEs
        admitted_cum = np.minimum(cum, np.maximum(room, 0)[:, None, :])
        admitted = np.diff(admitted_cum, axis=1,
                           prepend=np.zeros_like(admitted_cum[:, :1]))
        admitted = np.maximum(admitted, 0)
        self.q += admitted
        self.dropped += int((arrivals - admitted).sum())
        return admitted

    def serve(self, capacity: np.ndarray) -> np.ndarray:
        """Drain up to per-(RU,UE,service) byte capacities; returns served."""
        capacity = np.asarray(capacity, dtype=np.int64)
        served = np.minimum(self.q, np.maximum(capacity, 0))
        self.q -= served
        self.served += int(served.sum())
        return served

    @property
    def residual(self) -> int:
        return int(self.q.sum())

    def conservation_holds(self) -> bool:
        return self.arrived == self.served + self.residual + self.dropped


@dataclass
class LatencyBreakdown:
    """Per-UE end-to-end latency components, seconds."""

    cu: float
    midhaul: float
    du: float
    fronthaul: float
    radio_proc: np.ndarray  # (U,)

    @property
    def total(self) -> np.ndarray:
        return self.cu + self.midhaul + self.du + self.fronthaul \
            + self.radio_proc


def e2e_latency(sc: Scenario, routing: RoutingDecision,
                omega_total: np.ndarray, omega_ur: np.ndarray,
                ur_rates: np.ndarray) -> LatencyBreakdown:
    """End-to-end low-latency budget for every UE over one frame.

    ``omega_total`` is the aggregate packet rate per UE (pkt/s) driving the
    processing and transport terms; ``ur_rates`` has shape (slots, E, U) in
    bit/s.  Mini-slots in which a flow gets no rate are skipped in the radio
    sum; a flow with demand that is never served raises
    ``UnboundedLatencyError``.
    """
    omega_total = np.asarray(omega_total, dtype=float)
    omega_ur = np.asarray(omega_ur, dtype=float)
    ur_rates = np.asarray(ur_rates, dtype=float)
    n_slots, num_rus, num_ues = ur_rates.shape

    agg = float(omega_total.sum())
    cu = agg * sc.cycles_per_packet / sc.cpu_cu
    mh = agg * sc.packet_bits / sc.mh_capacity
    du = agg * sc.cycles_per_packet / sc.cpu_du

    ur_bits = routing.r * omega_ur[None, :] * sc.pkt_size_ur * 8.0  # (E, U)
    fh = float((ur_bits.sum(axis=1) / sc.fh_capacity).max())

    radio = np.full(num_ues, n_slots * sc.ru_proc_delay)
    for u in range(num_ues):
        if omega_ur[u] <= 0:
            continue
        routed = np.flatnonzero(routing.r[:, u] > 0)
        per_slot = np.zeros(n_slots)
        any_served = False
        for s in range(n_slots):
            rates = ur_rates[s, routed, u]
            ok = rates > 0
            if ok.any():
                any_served = True
                per_slot[s] = (ur_bits[routed[ok], u] / rates[ok]).max()
        if not any_served:
            raise UnboundedLatencyError(
                f"ue {u} routed low-latency flow never served this frame")
        radio[u] += per_slot.sum()

    return LatencyBreakdown(cu=cu, midhaul=mh, du=du, fronthaul=fh,
                            radio_proc=radio)


def first_drain_latency(sc: Scenario, fixed_terms: np.ndarray,
                        drain_slot: np.ndarray) -> np.ndarray:
    """Latency proxy: time until the per-frame backlog empties.

    ``drain_slot`` is the 1-based index of the last mini-slot in which the
    UE's low-latency queue was non-empty (0 when it never backlogged).
    """
    drain_slot = np.asarray(drain_slot, dtype=float)
    return np.asarray(fixed_terms, dtype=float) \
        + drain_slot * (sc.num_ur.tti + sc.ru_proc_delay)


def objective(embb_total_rate: float, worst_latency: float, lam: float,
              r_max: float, d_ur: float) -> float:
    """Weighted-sum scalarization of throughput versus worst-case latency."""
    if r_max <= 0 or d_ur <= 0:
        raise ValueError("normalizers must be positive")
    return embb_total_rate / r_max - lam * worst_latency / d_ur


@dataclass
class ConstraintReport:
    """Per-frame constraint evaluation with margins.

    Probabilistic constraints (eMBB rate floor, latency deadline) are exposed
    as per-UE indicator arrays so the runtime can aggregate frequencies.
    """

    em_rate_ok: np.ndarray        # (U,) bool, frame eMBB rate >= threshold
    em_rate_margin: np.ndarray
    fh_ok: np.ndarray             # (E,) bool
    fh_margin: np.ndarray
    ur_volume_ok: np.ndarray      # (E, U) bool
    ur_volume_margin: np.ndarray
    latency_ok: np.ndarray        # (U,) bool, first-drain <= deadline
    latency_margin: np.ndarray
    queue_ok: np.ndarray          # (E, S) bool
    queue_margin: np.ndarray
    rb_bw_ok: bool
    rb_bw_margin: float

    @property
    def hard_ok(self) -> bool:
        """All non-probabilistic constraints hold."""
        return bool(self.fh_ok.all() and self.queue_ok.all() and self.rb_bw_ok)


def check_frame_constraints(sc: Scenario, layout: BwpLayout,
                            em_rate_per_ue: np.ndarray,
                            mean_rate_per_ru: np.ndarray,
                            delivered_ur_bits: np.ndarray,
                            routed_ur_bits: np.ndarray,
                            queue_totals: np.ndarray,
                            latencies: np.ndarray) -> ConstraintReport:
    """Evaluate the frame-level constraint set and report margins.

    ``em_rate_per_ue``: frame-average eMBB rate per UE (bit/s).
    ``mean_rate_per_ru``: frame-average total served rate per RU (bit/s).
    ``delivered_ur_bits``/``routed_ur_bits``: (E, U) bits over the frame.
    ``queue_totals``: (E, services) bytes at frame end.
    ``latencies``: per-UE first-drain latency (s).
    """
    em_rate_per_ue = np.asarray(em_rate_per_ue, dtype=float)
    em_margin = em_rate_per_ue - sc.rate_threshold
    fh_margin = sc.fh_capacity - np.asarray(mean_rate_per_ru, dtype=float)
    vol_margin = np.asarray(delivered_ur_bits, dtype=float) \
        - np.asarray(routed_ur_bits, dtype=float)
    vol_ok = (vol_margin >= -1e-9) | (np.asarray(routed_ur_bits) <= 0)
    lat_margin = sc.latency_budget - np.asarray(latencies, dtype=float)
    q_margin = sc.qmax - np.asarray(queue_totals, dtype=float)
    rb_margin = min(layout.b_em - layout.o_em * sc.num_em.rb_bandwidth,
                    layout.b_ur - layout.o_ur * sc.num_ur.rb_bandwidth)
    return ConstraintReport(
        em_rate_ok=em_margin >= 0, em_rate_margin=em_margin,
        fh_ok=fh_margin >= 0, fh_margin=fh_margin,
        ur_volume_ok=vol_ok, ur_volume_margin=vol_margin,
        latency_ok=lat_margin >= 0, latency_margin=lat_margin,
        queue_ok=q_margin >= 0, queue_margin=q_margin,
        rb_bw_ok=rb_margin >= -1e-9, rb_bw_margin=float(rb_margin),
    )
