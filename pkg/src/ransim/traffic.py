"""Synthetic per-frame traffic demand, UE mobility and service classification.

Replaces external trace datasets at desk scale: broadband demand is constant
bitrate with an optional sinusoidal day pattern, low-latency demand is
Poisson packet arrivals, and routes follow nearest-RU under random-waypoint
mobility.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .scenario import Scenario

__all__ = [
    "ServiceClass",
    "DemandFrame",
    "ClassificationError",
    "gen_urllc_arrivals",
    "gen_embb_demand",
    "classify_service",
    "ru_positions",
    "RandomWaypointMobility",
    "TrafficGenerator",
    "read_demand_csv",
]

EMBB = 0
URLLC = 1


class ServiceClass(Enum):
    EMBB = "embb"
    URLLC = "urllc"


class ClassificationError(ValueError):
    """Service matches neither the bandwidth nor the latency predicate."""


@dataclass(frozen=True)
class DemandFrame:
    """Ground-truth demand and route for one frame."""

    t: int
    omega_em: np.ndarray    # pkt/s per UE
    omega_ur: np.ndarray    # pkt/s per UE
    true_route: np.ndarray  # RU index per UE


def gen_urllc_arrivals(rate: float, frame_len: float,
                       rng: np.random.Generator) -> int:
    """Poisson packet count for one frame at ``rate`` pkt/s."""
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    return int(rng.poisson(rate * frame_len))


def gen_embb_demand(rate: float, frame_len: float, t: int = 0,
                    sin_amplitude: float = 0.0,
                    sin_period: float = 200.0) -> float:
    """Bytes arriving in one frame of constant-bitrate traffic.

    With a nonzero amplitude the instantaneous rate is modulated by
    ``1 + a*sin(2*pi*t/period)`` so the forecaster has a temporal pattern
    to learn; amplitude 0 gives exactly rate*frame_len/8 bytes.
    """
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    mod = 1.0 + sin_amplitude * math.sin(2.0 * math.pi * t / sin_period)
    return rate * max(mod, 0.0) * frame_len / 8.0


def classify_service(bandwidth: float, latency: float,
                     bw_threshold: float, lat_threshold: float) -> ServiceClass:
    """Classify a service by its declared bandwidth and latency.

    Latency wins when both predicates hold: a hard real-time requirement
    dominates a mere throughput preference.
    """
    if bandwidth < 0 or latency < 0:
        raise ValueError("bandwidth and latency must be nonnegative")
    is_ur = latency < lat_threshold
    is_em = bandwidth > bw_threshold
    if is_ur:
        return ServiceClass.URLLC
    if is_em:
        return ServiceClass.EMBB
    raise ClassificationError(
        f"service (B={bandwidth}, L={latency}) matches no class")


def ru_positions(sc: Scenario) -> np.ndarray:
    """Fixed RU sites on a grid covering the square deployment area."""
    n = sc.num_rus
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    xs = (np.arange(cols) + 0.5) * sc.area_side / cols
    ys = (np.arange(rows) + 0.5) * sc.area_side / rows
    pts = [(x, y) for y in ys for x in xs]
    return np.asarray(pts[:n], dtype=float)


class RandomWaypointMobility:
    """Random-waypoint walk for all UEs inside the square area."""

    def __init__(self, sc: Scenario, rng: np.random.Generator):
        self.sc = sc
        self.rng = rng
        self.pos = rng.uniform(0, sc.area_side, size=(sc.num_ues, 2))
        self.target = rng.uniform(0, sc.area_side, size=(sc.num_ues, 2))

    def step(self) -> np.ndarray:
        """Advance one frame and return current positions."""
        step_len = self.sc.ue_speed * self.sc.frame_len
        delta = self.target - self.pos
        dist = np.linalg.norm(delta, axis=1)
        arrived = dist <= step_len
        moving = ~arrived
        self.pos[arrived] = self.target[arrived]
        if moving.any():
            self.pos[moving] += delta[moving] / dist[moving, None] * step_len
        if arrived.any():
            self.target[arrived] = self.rng.uniform(
                0, self.sc.area_side, size=(int(arrived.sum()), 2))
        return self.pos.copy()


class TrafficGenerator:
    """Frame-by-frame ground-truth demand, owned-rng, deterministic per seed."""

    def __init__(self, sc: Scenario, seed: int | None = None):
        self.sc = sc
        self.rng = np.random.default_rng(sc.seed if seed is None else seed)
        self.mobility = RandomWaypointMobility(sc, self.rng)
        self.ru_pos = ru_positions(sc)
        self._t = 0

    def next_frame(self) -> DemandFrame:
        sc = self.sc
        t = self._t
        self._t += 1
        pos = self.mobility.step()
        d2 = ((pos[:, None, :] - self.ru_pos[None, :, :]) ** 2).sum(axis=2)
        route = d2.argmin(axis=1)
        em_bytes = np.array([
            gen_embb_demand(sc.embb_rate, sc.frame_len, t,
                            sc.embb_sin_amplitude, sc.embb_sin_period)
            for _ in range(sc.num_ues)])
        omega_em = em_bytes / sc.pkt_size_em / sc.frame_len   # pkt/s
        counts = np.array([
            gen_urllc_arrivals(sc.urllc_rate, sc.frame_len, self.rng)
            for _ in range(sc.num_ues)], dtype=float)
        omega_ur = counts / sc.frame_len                       # pkt/s realized
        omega_em = np.clip(omega_em, 0.0, sc.omega_max)
        omega_ur = np.clip(omega_ur, 0.0, sc.omega_max)
        return DemandFrame(t=t, omega_em=omega_em, omega_ur=omega_ur,
                           true_route=route)

    def frames(self, n: int) -> list[DemandFrame]:
        return [self.next_frame() for _ in range(n)]


def read_demand_csv(text: str, num_ues: int) -> list[DemandFrame]:
    """Ingest an external trace: columns frame,ue,omega_em,omega_ur,route."""
    reader = csv.DictReader(io.StringIO(text))
    required = {"frame", "ue", "omega_em", "omega_ur", "route"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise ValueError(f"demand CSV must have columns {sorted(required)}")
    rows: dict[int, DemandFrame] = {}
    for rec in reader:
        t = int(rec["frame"])
        if t not in rows:
            rows[t] = DemandFrame(t=t,
                                  omega_em=np.zeros(num_ues),
                                  omega_ur=np.zeros(num_ues),
                                  true_route=np.zeros(num_ues, dtype=int))
        u = int(rec["ue"])
        rows[t].omega_em[u] = float(rec["omega_em"])
        rows[t].omega_ur[u] = float(rec["omega_ur"])
        rows[t].true_route[u] = int(rec["route"])
    return [rows[t] for t in sorted(rows)]
