"""Two-timescale simulation loop and metrics logging.

Per frame: forecast demand and routes, split bandwidth per RU, push arrivals,
then play every mini-slot on the low-latency TTI grid: pick services, RBs and
powers, project them feasible, serve queues, and record rates.  Frame-level
decisions (routes, split) are frozen between frame boundaries; mini-slot
decisions change every TTI.  Broadband service is accounted on the same
mini-slot grid so both queues share one event clock.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .allocator import (
    SERVICE_EMBB, SERVICE_URLLC, AllocatorModel, OracleInstance,
    assign_power, build_ssp_input, discretize_prbs, enumerate_grids,
    predict_allocation,
)
from .forecaster import ForecastModel, build_lsp_input, forecast
from .phy import check_power_feasible, embb_rate, sample_channel, urllc_rate
from .ranstate import (
    QueueState, RoutingDecision, UnboundedLatencyError, e2e_latency,
    first_drain_latency, objective,
)
from .scenario import Scenario
from .slicer import slice_bandwidth
from .traffic import TrafficGenerator, ru_positions

__all__ = [
    "A1Message",
    "O1Report",
    "MetricsLog",
    "run_simulation",
    "emit_report",
    "metrics_csv_text",
]

CONTROLLERS = ("heuristic", "oracle", "learned")


@dataclass
class A1Message:
    """Frame-scale policy handed from the slow to the fast control loop."""

    t: int
    omega_em: np.ndarray   # (U,) predicted pkt/s
    omega_ur: np.ndarray   # (U,)
    route: RoutingDecision
    phi: np.ndarray        # (E,)


@dataclass
class O1Report:
    """Per-frame observables reported back after the last mini-slot."""

    t: int
    queue_bytes: np.ndarray       # (E, U, 2)
    realized_em: np.ndarray       # (U,) pkt/s
    realized_ur: np.ndarray
    realized_route: np.ndarray    # (U,)
    em_rate_per_ue: np.ndarray    # (U,) bit/s served
    worst_latency: float


@dataclass
class MetricsLog:
    header: list
    rows: list = field(default_factory=list)
    arrived: int = 0
    served: int = 0
    residual: int = 0
    dropped: int = 0
    feasibility_failures: int = 0
    reports: list = field(default_factory=list)

    def conservation_holds(self) -> bool:
        return self.arrived == self.served + self.residual + self.dropped


def _split_bytes(total: int, fractions: np.ndarray) -> np.ndarray:
    """Integer split of ``total`` proportional to ``fractions``; remainder
    goes to the lowest indices."""
    raw = np.floor(total * fractions).astype(np.int64)
    short = total - raw.sum()
    order = np.argsort(-fractions, kind="stable")
    for i in range(int(short)):
        raw[order[i % len(raw)]] += 1
    return raw


def _frame_gains(sc: Scenario, pos: np.ndarray, rus: np.ndarray,
                 o_em: int, o_ur: int, rng: np.random.Generator):
    """Per-frame channel gains (E, O, U) for each slice's sub-bands."""
    num_rus, num_ues = len(rus), len(pos)
    g_em = np.zeros((num_rus, o_em, num_ues))
    g_ur = np.zeros((num_rus, o_ur, num_ues))
    for e in range(num_rus):
        for u in range(num_ues):
            d = max(np.linalg.norm(pos[u] - rus[e]), 1.0)
            chi = d ** (-sc.pathloss_exp)
            ch = sample_channel(chi, sc.rician_k, sc.antennas, rng,
                                size=(o_em + o_ur,))
            g = ch.gain
            g_em[e, :, u] = g[:o_em]
            g_ur[e, :, u] = g[o_em:]
    return g_em, g_ur


class _HeuristicSsp:
    """Largest-queue-first per-RU allocation, one RB per picked UE."""

    def decide(self, sc, queues, routing, layouts, gains_ur, slot, a1,
               history):
        out = []
        for e, lay in enumerate(layouts):
            ues = np.flatnonzero(routing.r[e] > 0)
            svc = np.zeros(sc.num_ues, dtype=int)
            frac = np.zeros(sc.num_ues)
            power = np.zeros(sc.num_ues)
            q_ur = queues.q[e, :, SERVICE_URLLC]
            q_em = queues.q[e, :, SERVICE_EMBB]
            for u in ues:
                svc[u] = SERVICE_URLLC if q_ur[u] > 0 else SERVICE_EMBB
            chosen = []
            for s_type, q, cap in ((SERVICE_URLLC, q_ur, lay.o_ur),
                                   (SERVICE_EMBB, q_em, lay.o_em)):
                members = [u for u in ues if svc[u] == s_type and q[u] > 0]
                members.sort(key=lambda u: (-q[u], u))
                for u in members[:cap]:
                    frac[u] = 1.0 / cap
                    chosen.append(u)
            for u in chosen:
                power[u] = sc.p_max / len(chosen)
            out.append((svc, frac, power))
        return out


class _LearnedSsp:
    def __init__(self, model: AllocatorModel, t_mini: int = 8):
        self.model = model
        self.t_mini = t_mini

    def decide(self, sc, queues, routing, layouts, gains_ur, slot, a1,
               history):
        route_idx = routing.r.argmax(axis=0)
        feats = np.zeros((sc.num_ues, 3 + sc.num_rus))
        feats[:, 0] = a1.omega_em
        feats[:, 1] = a1.omega_ur
        feats[:, 2] = a1.phi[route_idx]
        feats[np.arange(sc.num_ues), 3 + route_idx] = 1.0
        x = build_ssp_input(feats, history, slot, self.t_mini)
        pred = predict_allocation(self.model, x)
        out = []
        for e in range(sc.num_rus):
            mask = routing.r[e] > 0
            svc = pred.service.copy()
            frac = np.where(mask, pred.prb_frac, 0.0)
            power = np.where(mask, pred.power, 0.0)
            out.append((svc, frac, power))
        return out


class _OracleSsp:
    """Exhaustive per-RU search, enumerated once per frame."""

    def __init__(self, lam: float | None = None):
        self.lam = lam
        self._combos = None

    def start_frame(self, sc, layouts, gains_em, gains_ur, routing):
        self._combos = []
        for e, lay in enumerate(layouts):
            ues = np.flatnonzero(routing.r[e] > 0)
            # enumeration is capped at 3 sub-bands total; extra broadband
            # sub-bands beyond the cap stay unused under this controller
            em_cap = min(lay.o_em, max(3 - lay.o_ur, 0))
            inst = OracleInstance(
                gains_em=gains_em[e][:em_cap][:, ues],
                gains_ur=gains_ur[e][:lay.o_ur][:, ues],
                ur_queue_bits=np.zeros(len(ues)),
                em_demand_bits=np.ones(len(ues)),
                sc=sc, layout=lay)
            combos = enumerate_grids(inst)
            ur = np.array([c[2] for c in combos])  # (C, |ues|)
            # per-UE broadband rate so slots can credit only backlogged UEs
            em_ue = np.zeros((len(combos), len(ues)))
            for ci, (assign, _, _) in enumerate(combos):
                for rb, c in enumerate(assign):
                    if c is None or rb >= em_cap:
                        continue
                    u_local, lv = c
                    em_ue[ci, u_local] += embb_rate(
                        np.array([lv * sc.p_max]),
                        np.array([inst.gains_em[rb, u_local]]),
                        sc.num_em.rb_bandwidth, sc.noise)
            self._combos.append((ues, inst, combos, em_ue, ur))

    def decide(self, sc, queues, routing, layouts, gains_ur, slot, a1,
               history):
        lam = sc.lam if self.lam is None else self.lam
        out = []
        for e, lay in enumerate(layouts):
            ues, inst, combos, em_ue, ur = self._combos[e]
            svc = np.zeros(sc.num_ues, dtype=int)
            frac = np.zeros(sc.num_ues)
            power = np.zeros(sc.num_ues)
            if len(combos) == 0:
                out.append((svc, frac, power))
                continue
            q_bits = queues.q[e, ues, SERVICE_URLLC] * 8.0
            q_em = queues.q[e, ues, SERVICE_EMBB]
            with np.errstate(divide="ignore", invalid="ignore"):
                lat = np.where(q_bits[None, :] > 0,
                               np.where(ur > 0, q_bits[None, :] / ur,
                                        sc.frame_len),
                               0.0)
            lat = np.minimum(lat, sc.frame_len)
            n_c = len(combos)
            # mean over backlogged UEs, not max: with fewer sub-bands than
            # backlogged UEs the max saturates and stops rewarding partial
            # draining, which would starve the low-latency queues
            backlogged = int((q_bits > 0).sum())
            pen = lat.sum(axis=1) / max(backlogged, 1) \
                if lat.shape[1] else np.zeros(n_c)
            em_eff = (em_ue * (q_em > 0)[None, :]).sum(axis=1) \
                if len(ues) else np.zeros(n_c)
            obj = em_eff / sc.r_max - lam * pen / sc.latency_budget
            best = np.lexsort((np.arange(len(obj)), pen, -obj))[0]
            assign = combos[best][0]
            out.append(self._to_decision(sc, inst, ues, assign, lay))
        return out

    @staticmethod
    def _to_decision(sc, inst, ues, assign, lay):
        svc = np.zeros(sc.num_ues, dtype=int)
        frac = np.zeros(sc.num_ues)
        power = np.zeros(sc.num_ues)
        o_em = inst.gains_em.shape[0]
        counts = {}
        for rb, c in enumerate(assign):
            if c is None:
                continue
            u_local, lv = c
            u = ues[u_local]
            s = SERVICE_EMBB if rb < o_em else SERVICE_URLLC
            svc[u] = s
            counts.setdefault(u, [0, 0.0, s])
            counts[u][0] += 1
            counts[u][1] += lv * sc.p_max
        for u, (n, p, s) in counts.items():
            cap = lay.o_em if s == SERVICE_EMBB else lay.o_ur
            frac[u] = n / cap if cap else 0.0
            power[u] = p
        return svc, frac, power


def run_simulation(sc: Scenario, frames: int, controller: str = "heuristic",
                   forecaster_model: ForecastModel | None = None,
                   allocator_model: AllocatorModel | None = None,
                   window: int = 10, keep_reports: bool = False
                   ) -> MetricsLog:
    """Run ``frames`` frames and return the per-frame metrics log."""
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller '{controller}'")
    if controller == "learned" and (forecaster_model is None
                                    or allocator_model is None):
        raise ValueError("learned controller needs both models")

    gen = TrafficGenerator(sc)
    ch_rng = np.random.default_rng(np.random.SeedSequence([sc.seed, 1]))
    queues = QueueState(sc.num_rus, sc.num_ues, sc.qmax)
    rus = ru_positions(sc)
    s_per_frame = sc.num_ur.ttis_per_frame
    tti = sc.num_ur.tti
    o_em_max = int(math.floor(sc.ru_bandwidth / sc.num_em.rb_bandwidth))
    o_ur_max = int(math.floor(sc.ru_bandwidth / sc.num_ur.rb_bandwidth))

    if controller == "heuristic":
        ssp = _HeuristicSsp()
    elif controller == "oracle":
        ssp = _OracleSsp()
    else:
        ssp = _LearnedSsp(allocator_model)

    header = (["frame", "objective", "embb_tput_bps", "worst_ur_latency_s"]
              + [f"phi_ru{e}" for e in range(sc.num_rus)]
              + ["q_total_bytes", "drops_bytes", "c10e_freq", "c10h_freq"])
    log = MetricsLog(header=header)
    history_frames: list = []   # realized (om_em, om_ur, route) per frame
    last_realized = None

    for t in range(1, frames + 1):
        frame = gen.next_frame()
        pos = gen.mobility.pos.copy()

        # ---- long-term sub-problem -----------------------------------
        if t == 1:
            routing = RoutingDecision.uniform(sc.num_rus, sc.num_ues)
            pred_em = np.zeros(sc.num_ues)
            pred_ur = np.zeros(sc.num_ues)
            phi = np.full(sc.num_rus, 0.5)
        else:
            if controller == "oracle":
                pred_em = frame.omega_em.copy()
                pred_ur = frame.omega_ur.astype(float)
                route_idx = frame.true_route.copy()
            elif controller == "learned":
                x = build_lsp_input(history_frames, window, t, sc.num_ues,
                                    sc.num_rus)
                fc = forecast(forecaster_model, x)
                pred_em, pred_ur, route_idx = fc.omega_em, fc.omega_ur, \
                    fc.route
            else:
                pred_em, pred_ur, route_idx = last_realized
            routing = RoutingDecision.from_indices(route_idx, sc.num_rus)
            ur_load = routing.r @ pred_ur
            em_load = routing.r @ pred_em
            phi = slice_bandwidth(sc, ur_load, em_load).phi
        layouts = [sc.layout(p) for p in phi]
        a1 = A1Message(t=t, omega_em=pred_em, omega_ur=pred_ur,
                       route=routing, phi=phi)

        # ---- arrivals: realized demand on decided routes -------------
        em_bytes = np.rint(frame.omega_em * sc.pkt_size_em
                           * sc.frame_len).astype(np.int64)
        ur_bytes = np.rint(frame.omega_ur * sc.pkt_size_ur
                           * sc.frame_len).astype(np.int64)
        arrivals = np.zeros((sc.num_rus, sc.num_ues, 2), dtype=np.int64)
        for u in range(sc.num_ues):
            arrivals[:, u, SERVICE_EMBB] = _split_bytes(
                em_bytes[u], routing.r[:, u])
            arrivals[:, u, SERVICE_URLLC] = _split_bytes(
                ur_bytes[u], routing.r[:, u])
        queues.push(arrivals)

        # ---- frame-constant channel ----------------------------------
        gains_em, gains_ur = _frame_gains(sc, pos, rus, o_em_max, o_ur_max,
                                          ch_rng)
        if controller == "oracle":
            ssp.start_frame(sc, layouts, gains_em, gains_ur, routing)

        # ---- short-term sub-problem ----------------------------------
        ur_rates = np.zeros((s_per_frame, sc.num_rus, sc.num_ues))
        em_bits_served = np.zeros(sc.num_ues)
        drain_slot = np.zeros(sc.num_ues, dtype=int)
        mini_history: list = []

        for s in range(1, s_per_frame + 1):
            backlog = queues.q[:, :, SERVICE_URLLC].sum(axis=0)
            drain_slot[backlog > 0] = s
            if controller != "learned" and queues.residual == 0:
                # nothing queued: every controller would sit idle
                mini_history.append((np.zeros(sc.num_ues),
                                     np.zeros(sc.num_ues),
                                     np.zeros(sc.num_ues)))
                continue
            decisions = ssp.decide(sc, queues, routing, layouts, gains_ur,
                                   s, a1, mini_history)
            cap = np.zeros((sc.num_rus, sc.num_ues, 2), dtype=np.int64)
            slot_svc = np.zeros(sc.num_ues)
            slot_frac = np.zeros(sc.num_ues)
            slot_pwr = np.zeros(sc.num_ues)
            for e, (svc, frac, power) in enumerate(decisions):
                if not (frac > 0).any():
                    continue
                lay = layouts[e]
                slots = discretize_prbs(frac, svc, lay)
                grid, _ = assign_power(slots, svc, power,
                                       gains_ur[e][:lay.o_ur], sc, lay)
                gur = np.where(grid.psi_ur > 0,
                               gains_ur[e][:lay.o_ur][None], 1.0)
                rep = check_power_feasible(grid, sc.p_max, sc.noise,
                                           sc.snr_floor, gains_ur=gur)
                if not rep.feasible:
                    log.feasibility_failures += 1
                for u in range(sc.num_ues):
                    rbs = slots[u]
                    if len(rbs) == 0:
                        continue
                    if svc[u] == SERVICE_URLLC:
                        active = rbs[grid.psi_ur[0, rbs, u] > 0]
                        if len(active) == 0:
                            continue
                        rate = urllc_rate(
                            grid.p_ur[0, active, u],
                            gains_ur[e][active, u],
                            sc.num_ur.rb_bandwidth, tti, sc.error_prob,
                            np.ones(len(active)), sc.noise, sc.dispersion)
                        ur_rates[s - 1, e, u] = rate
                        cap[e, u, SERVICE_URLLC] = int(rate * tti / 8)
                    else:
                        rate = embb_rate(grid.p_em[0, rbs, u],
                                         gains_em[e][rbs, u],
                                         sc.num_em.rb_bandwidth, sc.noise)
                        cap[e, u, SERVICE_EMBB] = int(rate * tti / 8)
                    slot_svc[u] = svc[u]
                    slot_frac[u] = frac[u]
                    slot_pwr[u] = power[u]
            served = queues.serve(cap)
            em_bits_served += served[:, :, SERVICE_EMBB].sum(axis=0) * 8.0
            mini_history.append((slot_svc, slot_frac, slot_pwr))

        undrained = queues.q[:, :, SERVICE_URLLC].sum(axis=0) > 0

        # ---- frame metrics -------------------------------------------
        omega_total = frame.omega_em + frame.omega_ur
        agg = float(omega_total.sum())
        ur_bits_routed = routing.r * frame.omega_ur[None, :] \
            * sc.pkt_size_ur * 8.0
        fixed = agg * sc.cycles_per_packet / sc.cpu_cu \
            + agg * sc.packet_bits / sc.mh_capacity \
            + agg * sc.cycles_per_packet / sc.cpu_du \
            + float((ur_bits_routed.sum(axis=1) / sc.fh_capacity).max())
        try:
            lb = e2e_latency(sc, routing, omega_total,
                             frame.omega_ur.astype(float), ur_rates)
            worst_lat = float(np.max(lb.total))
        except UnboundedLatencyError:
            worst_lat = float("inf")

        em_rate_per_ue = em_bits_served / sc.frame_len
        obj = objective(float(em_rate_per_ue.sum()), worst_lat, sc.lam,
                        sc.r_max, sc.latency_budget)

        has_em = em_bytes > 0
        c10e = float((em_rate_per_ue[has_em] >= sc.rate_threshold).mean()) \
            if has_em.any() else 1.0
        has_ur = ur_bytes > 0
        if has_ur.any():
            drain_lat = first_drain_latency(
                sc, np.full(sc.num_ues, fixed), drain_slot)
            drain_lat[undrained] = np.inf
            c10h = float((drain_lat[has_ur] <= sc.latency_budget).mean())
        else:
            c10h = 1.0

        row = ([t, obj, float(em_rate_per_ue.sum()), worst_lat]
               + [float(p) for p in phi]
               + [queues.residual, queues.dropped, c10e, c10h])
        log.rows.append(row)
        if keep_reports:
            log.reports.append(O1Report(
                t=t, queue_bytes=queues.q.copy(),
                realized_em=frame.omega_em.copy(),
                realized_ur=frame.omega_ur.copy(),
                realized_route=frame.true_route.copy(),
                em_rate_per_ue=em_rate_per_ue,
                worst_latency=worst_lat))

        last_realized = (frame.omega_em.copy(),
                         frame.omega_ur.astype(float),
                         frame.true_route.copy())
        history_frames.append(last_realized)

    log.arrived = queues.arrived
    log.served = queues.served
    log.residual = queues.residual
    log.dropped = queues.dropped
    return log


def metrics_csv_text(log: MetricsLog) -> str:
    """Render the log as CSV; float cells use repr so reruns are
    byte-identical."""
    if not log.rows:
        raise ValueError("empty metrics log")
    lines = [",".join(log.header)]
    for row in log.rows:
        cells = []
        for v in row:
            if isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(repr(float(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def emit_report(log: MetricsLog, out_dir, plots: bool = False) -> list:
    """Write metrics.csv (and optional plots) into ``out_dir``.

    Errors before writing anything so no partial files appear.
    """
    import os

    text = metrics_csv_text(log)   # raises on empty log
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "metrics.csv")
    with open(path, "w") as fh:
        fh.write(text)
    written = [path]
    if plots:
        written += _write_plots(log, out_dir)
    return written


def _write_plots(log: MetricsLog, out_dir) -> list:
    import os

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    frames = [r[0] for r in log.rows]
    out = []
    for idx, name in ((1, "objective"), (2, "embb_throughput")):
        fig, ax = plt.subplots()
        ax.plot(frames, [r[idx] for r in log.rows])
        ax.set_xlabel("frame")
        ax.set_ylabel(name)
        path = os.path.join(out_dir, f"{name}.png")
        fig.savefig(path)
        plt.close(fig)
        out.append(path)
    return out
