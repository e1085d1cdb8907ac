import os

import numpy as np
import pytest

from ransim.cli import main
from ransim.runtime import (
    MetricsLog, _split_bytes, emit_report, metrics_csv_text, run_simulation,
)
from ransim.scenario import default_scenario, load_scenario

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def small_scenario(**overrides):
    with open(os.path.join(CONFIG_DIR, "reliability.ini")) as fh:
        sc = load_scenario(fh.read())
    if overrides:
        kwargs = {f: getattr(sc, f) for f in sc.__dataclass_fields__
                  if f != "numerologies"}
        kwargs.update(overrides)
        sc = default_scenario(**kwargs)
    return sc


class TestSplitBytes:
    def test_single_route_gets_all(self):
        out = _split_bytes(1000, np.array([0.0, 1.0]))
        assert out.tolist() == [0, 1000]

    def test_total_preserved(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            total = int(rng.integers(0, 10_000))
            frac = rng.dirichlet(np.ones(4))
            out = _split_bytes(total, frac)
            assert out.sum() == total
            assert (out >= 0).all()

    def test_even_split(self):
        out = _split_bytes(100, np.array([0.5, 0.5]))
        assert out.sum() == 100
        assert abs(out[0] - out[1]) <= 1


class TestZeroTraffic:
    def test_single_idle_frame(self):
        sc = small_scenario(embb_rate=0.0, urllc_rate=0.0)
        log = run_simulation(sc, 1)
        assert len(log.rows) == 1
        row = log.rows[0]
        frame, obj, tput, worst = row[0], row[1], row[2], row[3]
        assert frame == 1
        assert tput == 0.0
        # no demand: latency is the per-slot processing overhead only
        expected = sc.num_ur.ttis_per_frame * sc.ru_proc_delay
        assert worst == pytest.approx(expected)
        assert obj == pytest.approx(-sc.lam * expected / sc.latency_budget)
        assert row[-2] == 1.0 and row[-1] == 1.0     # both freq columns
        assert log.arrived == 0 and log.dropped == 0


class TestRunSimulation:
    def test_frame_one_uses_half_split(self):
        sc = small_scenario()
        log = run_simulation(sc, 1)
        phi_cols = log.rows[0][4:4 + sc.num_rus]
        assert phi_cols == [0.5] * sc.num_rus

    def test_conservation_heuristic(self):
        log = run_simulation(small_scenario(), 30)
        assert log.conservation_holds()
        assert log.arrived > 0

    def test_conservation_oracle(self):
        log = run_simulation(small_scenario(), 30, controller="oracle")
        assert log.conservation_holds()
        assert log.feasibility_failures == 0

    def test_oracle_meets_deadline(self):
        log = run_simulation(small_scenario(), 60, controller="oracle")
        c10h = np.array([r[-1] for r in log.rows[1:]])   # frame 1 warms up
        assert c10h.mean() >= 0.9

    def test_deterministic_rerun(self):
        sc = small_scenario()
        a = metrics_csv_text(run_simulation(sc, 10))
        b = metrics_csv_text(run_simulation(sc, 10))
        assert a == b

    def test_seed_changes_traffic(self):
        a = metrics_csv_text(run_simulation(small_scenario(), 10))
        b = metrics_csv_text(run_simulation(small_scenario(seed=1), 10))
        assert a != b

    def test_unknown_controller_rejected(self):
        with pytest.raises(ValueError):
            run_simulation(small_scenario(), 1, controller="magic")

    def test_learned_needs_models(self):
        with pytest.raises(ValueError):
            run_simulation(small_scenario(), 1, controller="learned")

    def test_reports_kept_on_request(self):
        sc = small_scenario()
        log = run_simulation(sc, 3, keep_reports=True)
        assert len(log.reports) == 3
        rep = log.reports[1]
        assert rep.t == 2
        assert rep.queue_bytes.shape == (sc.num_rus, sc.num_ues, 2)


class TestEmitReport:
    HEADER = ("frame,objective,embb_tput_bps,worst_ur_latency_s,"
              "phi_ru0,q_total_bytes,drops_bytes,c10e_freq,c10h_freq")

    def test_metrics_header_and_floats(self, tmp_path):
        log = run_simulation(small_scenario(), 3)
        written = emit_report(log, tmp_path)
        assert written == [os.path.join(tmp_path, "metrics.csv")]
        lines = open(written[0]).read().splitlines()
        assert lines[0] == self.HEADER
        assert len(lines) == 4
        # repr() floats round-trip exactly
        cells = lines[1].split(",")
        assert float(cells[1]) == log.rows[0][1]

    def test_empty_log_writes_nothing(self, tmp_path):
        out = tmp_path / "sub"
        with pytest.raises(ValueError):
            emit_report(MetricsLog(header=["frame"]), out)
        assert not out.exists()


class TestCli:
    def test_simulate_and_report(self, tmp_path):
        out = str(tmp_path / "run")
        rc = main(["simulate", "--scenario",
                   os.path.join(CONFIG_DIR, "reliability.ini"),
                   "--frames", "5", "--out", out])
        assert rc == 0
        assert os.path.exists(os.path.join(out, "metrics.csv"))
        assert main(["report", "--run", out]) == 0

    def test_missing_scenario_is_config_error(self, tmp_path):
        rc = main(["simulate", "--scenario", str(tmp_path / "nope.ini"),
                   "--frames", "1", "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_learned_without_checkpoints_is_config_error(self, tmp_path):
        rc = main(["simulate", "--frames", "1", "--controller", "learned",
                   "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_bad_subcommand_is_config_error(self):
        assert main(["frobnicate"]) == 2

    def test_train_allocator_writes_checkpoint(self, tmp_path):
        ckpt = str(tmp_path / "a.ckpt")
        rc = main(["train-allocator", "--samples", "64", "--epochs", "1",
                   "--out", ckpt])
        assert rc == 0
        assert os.path.exists(ckpt)

    def test_cl_run_writes_metrics(self, tmp_path):
        out = str(tmp_path / "cl")
        rc = main(["cl-run", "--tasks", "2", "--samples-per-class", "20",
                   "--epochs", "3", "--lr", "1e-2", "--out", out])
        assert rc == 0
        lines = open(os.path.join(out, "cl_metrics.csv")).read().splitlines()
        assert lines[0] == "task,TSA,TSF,AA,AF,BWT,FWT,CF"
