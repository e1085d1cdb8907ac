"""Command line front end.

Subcommands: simulate, train-forecaster, train-allocator, cl-run, report.
Exit codes: 0 success, 2 bad arguments or configuration, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .allocator import AllocatorModel, make_allocator_dataset, train_allocator
from .continual import make_task_stream, metrics_to_csv, run_continual
from .forecaster import (
    ForecastModel, evaluate_forecaster, make_windows, persistence_mse,
    train_forecaster,
)
from .nn import load_params, save_params
from .runtime import CONTROLLERS, emit_report, run_simulation
from .scenario import Scenario, ScenarioError, default_scenario, load_scenario
from .traffic import TrafficGenerator

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_scenario_arg(path: str | None, seed: int | None) -> Scenario:
    if path is None:
        sc = default_scenario()
    else:
        with open(path) as fh:
            sc = load_scenario(fh.read())
    if seed is not None:
        sc = Scenario(**{**{f: getattr(sc, f) for f in
                            sc.__dataclass_fields__ if f != "numerologies"},
                         "seed": seed})
    return sc


def _cmd_simulate(args) -> int:
    sc = _load_scenario_arg(args.scenario, args.seed)
    fm = am = None
    if args.controller == "learned":
        if not args.forecaster or not args.allocator:
            raise ScenarioError(
                "learned controller needs --forecaster and --allocator")
        fm = ForecastModel(sc.num_rus, window=args.window, seed=sc.seed,
                           n_layers=args.forecaster_layers)
        fm.load(load_params(args.forecaster))
        am = AllocatorModel(f_in=3 + sc.num_rus + 3, p_max=sc.p_max,
                            seed=sc.seed)
        am.load(load_params(args.allocator))
    log = run_simulation(sc, args.frames, controller=args.controller,
                         forecaster_model=fm, allocator_model=am,
                         window=args.window)
    written = emit_report(log, args.out, plots=args.plots)
    for path in written:
        print(path)
    print(f"frames={args.frames} conservation="
          f"{'ok' if log.conservation_holds() else 'VIOLATED'} "
          f"infeasible_grids={log.feasibility_failures}")
    return EXIT_OK if log.conservation_holds() else EXIT_RUNTIME


def _cmd_train_forecaster(args) -> int:
    sc = _load_scenario_arg(args.scenario, args.seed)
    gen = TrafficGenerator(sc)
    frames = [(f.omega_em, f.omega_ur, f.true_route)
              for f in gen.frames(args.frames)]
    dataset = make_windows(frames, args.window, sc.num_rus)
    model = ForecastModel(sc.num_rus, window=args.window, seed=sc.seed,
                          n_layers=args.layers)
    log_fh = open(args.log, "w") if args.log else None
    try:
        train_forecaster(dataset, model, epochs=args.epochs, lr=args.lr,
                         seed=sc.seed, log=log_fh)
    finally:
        if log_fh:
            log_fh.close()
    save_params(args.out, {k: p.data for k, p in model.params().items()})
    stats = evaluate_forecaster(model, dataset)
    print(f"{args.out} mse_demand={stats['mse_demand']:.4f} "
          f"acc_route={stats['acc_route']:.4f} "
          f"persistence_mse={persistence_mse(dataset):.4f}")
    return EXIT_OK


def _cmd_train_allocator(args) -> int:
    f_in = args.features
    dataset = make_allocator_dataset(args.samples, f_in, args.t_mini,
                                     args.p_max, seed=args.seed)
    model = AllocatorModel(f_in=f_in, p_max=args.p_max, seed=args.seed)
    log_fh = open(args.log, "w") if args.log else None
    try:
        history = train_allocator(dataset, model, epochs=args.epochs,
                                  lr=args.lr, seed=args.seed, log=log_fh)
    finally:
        if log_fh:
            log_fh.close()
    save_params(args.out, {k: p.data for k, p in model.params().items()})
    last = history[-1]
    print(f"{args.out} acc_service={last[4]:.4f}")
    return EXIT_OK


def _cmd_cl_run(args) -> int:
    stream = make_task_stream(num_tasks=args.tasks,
                              samples_per_class=args.samples_per_class,
                              dim=args.dim, seed=args.seed)
    res = run_continual(stream, replay=not args.no_replay,
                        capacity=args.capacity, epochs=args.epochs,
                        lr=args.lr, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "cl_metrics.csv")
    with open(path, "w") as fh:
        fh.write(metrics_to_csv(res["matrix"], res["metrics"],
                                res["baselines"]))
    m = res["metrics"]
    print(path)
    print(f"AA={m['AA']:.4f} AF_acc={m['AF_acc']:.4f} "
          f"objective={m['objective']:.4f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = os.path.join(args.run, "metrics.csv")
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"no data rows in {path}")
    objs = np.array([float(r["objective"]) for r in rows])
    tput = np.array([float(r["embb_tput_bps"]) for r in rows])
    c10e = np.array([float(r["c10e_freq"]) for r in rows])
    c10h = np.array([float(r["c10h_freq"]) for r in rows])
    finite = np.isfinite(objs)
    print(f"frames={len(rows)}")
    print(f"mean_objective={objs[finite].mean() if finite.any() else float('nan')}"
          f" finite_frac={finite.mean():.4f}")
    print(f"mean_embb_tput_bps={tput.mean()}")
    print(f"rate_floor_freq={c10e.mean():.4f}")
    print(f"deadline_freq={c10h.mean():.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ransim")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("simulate", help="run the two-timescale loop")
    sim.add_argument("--scenario", help="INI scenario file")
    sim.add_argument("--frames", type=int, default=100)
    sim.add_argument("--controller", choices=CONTROLLERS,
                     default="heuristic")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--forecaster", help="forecaster checkpoint")
    sim.add_argument("--allocator", help="allocator checkpoint")
    sim.add_argument("--forecaster-layers", type=int, default=6)
    sim.add_argument("--window", type=int, default=10)
    sim.add_argument("--plots", action="store_true")
    sim.set_defaults(fn=_cmd_simulate)

    tf = sub.add_parser("train-forecaster", help="fit the demand forecaster")
    tf.add_argument("--scenario")
    tf.add_argument("--frames", type=int, default=500)
    tf.add_argument("--window", type=int, default=10)
    tf.add_argument("--layers", type=int, default=6)
    tf.add_argument("--epochs", type=int, default=10)
    tf.add_argument("--lr", type=float, default=1e-4)
    tf.add_argument("--seed", type=int)
    tf.add_argument("--log", help="training curve CSV")
    tf.add_argument("--out", required=True, help="checkpoint path")
    tf.set_defaults(fn=_cmd_train_forecaster)

    ta = sub.add_parser("train-allocator", help="fit the mini-slot allocator")
    ta.add_argument("--samples", type=int, default=2000)
    ta.add_argument("--features", type=int, default=10)
    ta.add_argument("--t-mini", type=int, default=8)
    ta.add_argument("--p-max", type=float, default=1.0)
    ta.add_argument("--epochs", type=int, default=10)
    ta.add_argument("--lr", type=float, default=1e-3)
    ta.add_argument("--seed", type=int, default=0)
    ta.add_argument("--log", help="training curve CSV")
    ta.add_argument("--out", required=True, help="checkpoint path")
    ta.set_defaults(fn=_cmd_train_allocator)

    cl = sub.add_parser("cl-run", help="continual learning experiment")
    cl.add_argument("--tasks", type=int, default=7)
    cl.add_argument("--samples-per-class", type=int, default=100)
    cl.add_argument("--dim", type=int, default=6)
    cl.add_argument("--capacity", type=int, default=1000)
    cl.add_argument("--no-replay", action="store_true")
    cl.add_argument("--epochs", type=int, default=30)
    cl.add_argument("--lr", type=float, default=1e-3)
    cl.add_argument("--seed", type=int, default=0)
    cl.add_argument("--out", required=True, help="output directory")
    cl.set_defaults(fn=_cmd_cl_run)

    rp = sub.add_parser("report", help="summarize a simulation run")
    rp.add_argument("--run", required=True, help="directory with metrics.csv")
    rp.set_defaults(fn=_cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (ScenarioError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
