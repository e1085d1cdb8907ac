"""Mini-slot resource allocation.

A shared-weight two-layer LSTM reads per-UE frame context plus the current
frame's mini-slot history and predicts service type, PRB fraction and
transmit power.  The predictions are discretized into an orthogonal RB grid
and powers are projected into the feasible set.  A brute-force oracle solves
tiny instances exactly for labeling and regression checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .nn import (
    LSTM, AdamState, Linear, Tensor, adam_step, cross_entropy, mse,
)
from .phy import PowerGrid, embb_rate, q_inv, urllc_rate
from .scenario import BwpLayout, Scenario

__all__ = [
    "SspPrediction",
    "AllocatorModel",
    "OracleInstance",
    "OracleResult",
    "build_ssp_input",
    "predict_allocation",
    "discretize_prbs",
    "assign_power",
    "oracle_allocate",
    "enumerate_grids",
    "instance_objective",
    "train_allocator",
    "make_allocator_dataset",
]

HIDDEN = 32
N_LSTM_LAYERS = 2
P_DROP = 0.2
SERVICE_EMBB, SERVICE_URLLC = 0, 1


def build_ssp_input(frame_features: np.ndarray, history: list, t_s: int,
                    t_mini: int) -> np.ndarray:
    """Per-UE sequence (U, t_mini, F + 3) for mini-slot ``t_s`` (1-based).

    ``frame_features`` (U, F) repeats at every step; the trailing three
    channels carry (service, prb fraction, power) from slots 1..t_s-1 and
    are zero for slots not yet played.
    """
    if t_s < 1:
        raise ValueError("mini-slot index starts at 1")
    frame_features = np.asarray(frame_features, dtype=float)
    num_ues, f = frame_features.shape
    x = np.zeros((num_ues, t_mini, f + 3))
    x[:, :, :f] = frame_features[:, None, :]
    for k, (svc, psi, pwr) in enumerate(history[:t_s - 1][-t_mini:]):
        x[:, k, f + 0] = svc
        x[:, k, f + 1] = psi
        x[:, k, f + 2] = pwr
    return x


@dataclass
class SspPrediction:
    """Per-UE mini-slot decision before discretization."""

    service_logits: np.ndarray  # (U, 2)
    service: np.ndarray         # (U,), argmax
    prb_frac: np.ndarray        # (U,) in [0, 1]
    power: np.ndarray           # (U,) in [0, p_max]


class AllocatorModel:
    """One LSTM shared across UEs with three output heads."""

    def __init__(self, f_in: int, p_max: float, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.p_max = p_max
        self.lstm = LSTM(f_in, HIDDEN, N_LSTM_LAYERS, rng, p_drop=P_DROP)
        self.head_service = Linear(HIDDEN, 2, rng)
        self.head_prb = Linear(HIDDEN, 1, rng)
        self.head_power = Linear(HIDDEN, 1, rng)

    def __call__(self, x: np.ndarray, rng=None, train: bool = False):
        h = self.lstm(Tensor(x), rng=rng, train=train)
        logits = self.head_service(h)
        prb = self.head_prb(h)[:, 0].relu()
        power = self.head_power(h)[:, 0].relu()
        return logits, prb, power

    def params(self) -> dict:
        return {**self.lstm.params("lstm"),
                **self.head_service.params("head_service"),
                **self.head_prb.params("head_prb"),
                **self.head_power.params("head_power")}

    def load(self, table: dict):
        for name, p in self.params().items():
            if name not in table:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            if table[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for '{name}'")
            p.data = table[name].astype(np.float64)


def predict_allocation(model: AllocatorModel, x: np.ndarray) -> SspPrediction:
    logits, prb, power = model(x, train=False)
    return SspPrediction(
        service_logits=logits.data.copy(),
        service=logits.data.argmax(axis=1),
        prb_frac=np.clip(prb.data, 0.0, 1.0),
        power=np.clip(power.data, 0.0, model.p_max),
    )


def discretize_prbs(prb_frac: np.ndarray, service: np.ndarray,
                    layout: BwpLayout) -> list:
    """Integer RB placement per UE inside the service's slice.

    Counts are round-half-up of frac * slice size, clamped to what is still
    free.  Low-latency UEs place first, then broadband, lower UE index first
    within each class; placement takes the lowest-indexed free sub-bands.
    Returns a list of sub-band index arrays, one per UE.
    """
    prb_frac = np.asarray(prb_frac, dtype=float)
    service = np.asarray(service, dtype=int)
    num_ues = len(prb_frac)
    free = {SERVICE_EMBB: list(range(layout.o_em)),
            SERVICE_URLLC: list(range(layout.o_ur))}
    slots = [np.empty(0, dtype=int)] * num_ues
    order = [u for u in range(num_ues) if service[u] == SERVICE_URLLC] \
        + [u for u in range(num_ues) if service[u] == SERVICE_EMBB]
    cap = {SERVICE_EMBB: layout.o_em, SERVICE_URLLC: layout.o_ur}
    for u in order:
        svc = service[u]
        n = int(np.floor(prb_frac[u] * cap[svc] + 0.5))
        n = min(n, len(free[svc]))
        slots[u] = np.array(free[svc][:n], dtype=int)
        free[svc] = free[svc][n:]
    return slots


@dataclass
class PowerReport:
    """What projection into the feasible set had to do."""

    rescaled: bool = False
    shed: list = field(default_factory=list)   # (ue, sub-band) dropped


def assign_power(placements: list, service: np.ndarray, power: np.ndarray,
                 gains_ur: np.ndarray, sc: Scenario, layout: BwpLayout):
    """Spread per-UE power over its RBs and project into the power set.

    Each UE's predicted power splits evenly over its assigned RBs.
    Low-latency RBs below the SNR floor are raised to it; if the RU total
    then exceeds the budget the discretionary part (everything above the
    floors) is scaled down proportionally.  When the floors alone exceed
    the budget, highest-index low-latency RBs are shed until they fit.
    Returns (PowerGrid for one RU, PowerReport).
    """
    service = np.asarray(service, dtype=int)
    power = np.asarray(power, dtype=float)
    num_ues = len(placements)
    grid = PowerGrid.zeros(1, layout.o_em, layout.o_ur, num_ues)
    report = PowerReport()

    floors = np.zeros((layout.o_ur, num_ues))
    for u, rbs in enumerate(placements):
        if len(rbs) == 0:
            continue
        share = power[u] / len(rbs)
        if service[u] == SERVICE_URLLC:
            grid.psi_ur[0, rbs, u] = 1
            for o in rbs:
                floors[o, u] = sc.noise * sc.snr_floor \
                    / max(gains_ur[o, u], 1e-300)
            grid.p_ur[0, rbs, u] = np.maximum(share, floors[rbs, u])
        else:
            grid.psi_em[0, rbs, u] = 1
            grid.p_em[0, rbs, u] = share

    # shed low-latency RBs (highest sub-band first) while floors overflow
    active_floor = floors * grid.psi_ur[0]
    while active_floor.sum() > sc.p_max:
        occupied = np.argwhere(grid.psi_ur[0] > 0)
        if len(occupied) == 0:
            break
        o, u = max(occupied, key=lambda t: (t[0], t[1]))
        grid.psi_ur[0, o, u] = 0
        grid.p_ur[0, o, u] = 0.0
        report.shed.append((int(u), int(o)))
        active_floor = floors * grid.psi_ur[0]

    floor_total = float((floors * grid.psi_ur[0]).sum())
    disc = grid.p_em[0].sum() + (grid.p_ur[0] - floors * grid.psi_ur[0]).sum()
    total = floor_total + disc
    if total > sc.p_max and disc > 0:
        scale = max(sc.p_max - floor_total, 0.0) / disc
        grid.p_em[0] *= scale
        grid.p_ur[0] = floors * grid.psi_ur[0] \
            + (grid.p_ur[0] - floors * grid.psi_ur[0]) * scale
        report.rescaled = True
    return grid, report


# ---------------------------------------------------------------------------
# brute-force oracle


@dataclass
class OracleInstance:
    """One-RU mini-slot instance small enough to enumerate."""

    gains_em: np.ndarray      # (o_em, U)
    gains_ur: np.ndarray      # (o_ur, U)
    ur_queue_bits: np.ndarray  # (U,)
    em_demand_bits: np.ndarray  # (U,), 0 means no broadband traffic to send
    sc: Scenario
    layout: BwpLayout
    levels: tuple = (0.5, 1.0)   # power fractions of p_max, nonzero

    def __post_init__(self):
        u = self.gains_em.shape[1]
        o = self.gains_em.shape[0] + self.gains_ur.shape[0]
        if u > 2 or o > 3 or len(self.levels) > 3:
            raise ValueError("instance exceeds enumeration bounds")


@dataclass
class OracleResult:
    feasible: bool
    objective: float
    em_rate: float
    worst_latency: float
    assign: tuple      # per-RB (ue, level) or None
    grid: PowerGrid | None


def _grid_from_assign(inst: OracleInstance, assign) -> PowerGrid:
    o_em = inst.gains_em.shape[0]
    num_ues = inst.gains_em.shape[1]
    grid = PowerGrid.zeros(1, o_em, inst.gains_ur.shape[0], num_ues)
    for rb, choice in enumerate(assign):
        if choice is None:
            continue
        u, level = choice
        p = level * inst.sc.p_max
        if rb < o_em:
            grid.psi_em[0, rb, u] = 1
            grid.p_em[0, rb, u] = p
        else:
            grid.psi_ur[0, rb - o_em, u] = 1
            grid.p_ur[0, rb - o_em, u] = p
    return grid


def enumerate_grids(inst: OracleInstance):
    """All feasible assignments with their rates.

    Yields (assign, em_rate_total, ur_rate_per_ue).  Feasibility covers the
    per-RU budget, the low-latency SNR floor, RB orthogonality (implicit in
    the encoding) and one service type per UE.
    """
    sc = inst.sc
    o_em = inst.gains_em.shape[0]
    o_ur = inst.gains_ur.shape[0]
    num_ues = inst.gains_em.shape[1]
    num_ur = sc.num_ur
    choices = [None] + [(u, lv) for u in range(num_ues)
                        for lv in inst.levels]
    out = []
    for assign in product(choices, repeat=o_em + o_ur):
        total_p = sum(lv * sc.p_max for c in assign if c is not None
                      for lv in [c[1]])
        if total_p > sc.p_max + 1e-12:
            continue
        svc_seen = {}
        ok = True
        for rb, c in enumerate(assign):
            if c is None:
                continue
            u = c[0]
            svc = SERVICE_EMBB if rb < o_em else SERVICE_URLLC
            if svc_seen.setdefault(u, svc) != svc:
                ok = False
                break
            if svc == SERVICE_URLLC:
                g = inst.gains_ur[rb - o_em, u]
                if c[1] * sc.p_max * g < sc.noise * sc.snr_floor - 1e-18:
                    ok = False
                    break
        if not ok:
            continue
        em_total = 0.0
        ur_rate = np.zeros(num_ues)
        for rb, c in enumerate(assign):
            if c is None:
                continue
            u, lv = c
            p = lv * sc.p_max
            if rb < o_em:
                if inst.em_demand_bits[u] > 0:
                    em_total += embb_rate(
                        np.array([p]), np.array([inst.gains_em[rb, u]]),
                        sc.num_em.rb_bandwidth, sc.noise)
            else:
                ur_rate[u] += urllc_rate(
                    np.array([p]), np.array([inst.gains_ur[rb - o_em, u]]),
                    num_ur.rb_bandwidth, num_ur.tti, sc.error_prob,
                    np.array([1.0]), sc.noise, sc.dispersion)
        out.append((assign, em_total, ur_rate))
    return out


def _worst_latency(inst: OracleInstance, ur_rate: np.ndarray) -> float:
    """Drain-time proxy: queued bits over served rate, capped at a frame."""
    worst = 0.0
    for u in range(len(ur_rate)):
        q = inst.ur_queue_bits[u]
        if q <= 0:
            continue
        lat = q / ur_rate[u] if ur_rate[u] > 0 else inst.sc.frame_len
        worst = max(worst, min(lat, inst.sc.frame_len))
    return worst


def instance_objective(inst: OracleInstance, em_total: float,
                       ur_rate: np.ndarray, lam: float):
    """Scalarized value of one enumerated assignment; returns (obj, lat)."""
    lat = _worst_latency(inst, ur_rate)
    return em_total / inst.sc.r_max - lam * lat / inst.sc.latency_budget, lat


def oracle_allocate(inst: OracleInstance, lam: float) -> OracleResult:
    """Exhaustive search for the best feasible assignment.

    Maximizes em_rate/r_max - lam * worst_latency/d_ur.  Ties prefer lower
    worst latency, then lexicographic assignment order, so the lambda sweep
    is monotone.
    """
    best = None
    for idx, (assign, em_total, ur_rate) in enumerate(enumerate_grids(inst)):
        obj, lat = instance_objective(inst, em_total, ur_rate, lam)
        key = (obj, -lat, -idx)
        if best is None or key > best[0]:
            best = (key, assign, em_total, lat, obj)
    if best is None:
        return OracleResult(feasible=False, objective=-np.inf, em_rate=0.0,
                            worst_latency=np.inf, assign=(), grid=None)
    _, assign, em_total, lat, obj = best
    return OracleResult(feasible=True, objective=obj, em_rate=em_total,
                        worst_latency=lat, assign=assign,
                        grid=_grid_from_assign(inst, assign))


# ---------------------------------------------------------------------------
# training


def train_allocator(dataset, model: AllocatorModel, epochs: int = 10,
                    lr: float = 1e-3, batch_size: int = 32, seed: int = 0,
                    log=None):
    """Minimize ce_service + mse_prb + mse_power with Adam.

    ``dataset`` = (x (N, T, F), service (N,), prb (N,), power (N,)); power
    targets are scaled by p_max inside the loss so the three terms are
    comparable.  Returns per-epoch log rows.
    """
    xs, y_svc, y_prb, y_pwr = dataset
    if len(xs) == 0:
        raise ValueError("empty training dataset")
    order_rng = np.random.default_rng(seed)
    drop_rng = np.random.default_rng(seed + 10_000)
    state = AdamState(model.params(), lr=lr)
    history = []
    if log is not None:
        log.write("epoch,loss_service,loss_prb,loss_power,acc_service\n")
    n = len(xs)
    for epoch in range(epochs):
        perm = order_rng.permutation(n)
        sums = np.zeros(3)
        correct = 0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            state.zero_grad()
            logits, prb, power = model(xs[idx], rng=drop_rng, train=True)
            l_svc = cross_entropy(logits, y_svc[idx])
            l_prb = mse(prb, y_prb[idx])
            l_pwr = mse(power * (1.0 / model.p_max),
                        y_pwr[idx] / model.p_max)
            loss = l_svc + l_prb + l_pwr
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}")
            loss.backward()
            adam_step(state)
            k = len(idx)
            sums += k * np.array([l_svc.item(), l_prb.item(), l_pwr.item()])
            correct += int((logits.data.argmax(axis=1) == y_svc[idx]).sum())
        row = (epoch, *(sums / n), correct / n)
        history.append(row)
        if log is not None:
            log.write(f"{epoch},{row[1]:.6f},{row[2]:.6f},"
                      f"{row[3]:.6f},{row[4]:.6f}\n")
    return history


def make_allocator_dataset(n: int, f_in: int, t_mini: int, p_max: float,
                           seed: int = 0, margin: float = 2.0):
    """Synthetic separable mini-slot samples.

    The first two frame features act as broadband and low-latency load;
    whichever is larger (by at least ``margin``) decides the service label,
    and PRB fraction / power targets are smooth functions of the winning
    load so the regression heads have learnable structure.
    """
    rng = np.random.default_rng(seed)
    xs = np.zeros((n, t_mini, f_in))
    y_svc = np.zeros(n, dtype=int)
    y_prb = np.zeros(n)
    y_pwr = np.zeros(n)
    for i in range(n):
        svc = int(rng.integers(2))
        lo = rng.uniform(0.0, 1.0)
        hi = lo + margin + rng.uniform(0.0, 1.0)
        load_em, load_ur = (hi, lo) if svc == SERVICE_EMBB else (lo, hi)
        feats = rng.uniform(0.0, 1.0, f_in)
        feats[0] = load_em
        feats[1] = load_ur
        xs[i, :, :] = feats
        y_svc[i] = svc
        win = hi / (hi + lo + 1.0)
        y_prb[i] = np.clip(win, 0.0, 1.0)
        y_pwr[i] = np.clip(win * p_max, 0.0, p_max)
    return xs, y_svc, y_prb, y_pwr
