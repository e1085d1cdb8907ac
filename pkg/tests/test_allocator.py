import numpy as np
import pytest

from ransim.allocator import (
    SERVICE_EMBB, SERVICE_URLLC, AllocatorModel, OracleInstance,
    assign_power, build_ssp_input, discretize_prbs, enumerate_grids,
    instance_objective, make_allocator_dataset, oracle_allocate,
    predict_allocation, train_allocator,
)
from ransim.phy import check_power_feasible
from ransim.scenario import default_scenario


class TestBuildInput:
    def test_first_slot_history_zero(self):
        feats = np.random.default_rng(0).uniform(size=(24, 4))
        x = build_ssp_input(feats, [], t_s=1, t_mini=8)
        assert x.shape == (24, 8, 7)
        assert np.allclose(x[:, :, 4:], 0.0)
        assert np.allclose(x[:, 3, :4], feats)

    def test_second_slot_one_entry(self):
        feats = np.zeros((2, 4))
        hist = [(np.array([0, 1]), np.array([0.5, 0.25]),
                 np.array([0.1, 0.2]))]
        x = build_ssp_input(feats, hist, t_s=2, t_mini=4)
        assert np.allclose(x[:, 1:, 4:], 0.0)
        assert np.allclose(x[:, 0, 4], [0, 1])
        assert np.allclose(x[:, 0, 5], [0.5, 0.25])
        assert np.allclose(x[:, 0, 6], [0.1, 0.2])

    def test_bad_slot_index(self):
        with pytest.raises(ValueError):
            build_ssp_input(np.zeros((1, 4)), [], t_s=0, t_mini=4)


class TestPredict:
    def model(self, seed=0):
        return AllocatorModel(f_in=7, p_max=1.0, seed=seed)

    def test_ranges(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 4, 7))
        pred = predict_allocation(self.model(), x)
        assert ((pred.prb_frac >= 0) & (pred.prb_frac <= 1)).all()
        assert ((pred.power >= 0) & (pred.power <= 1.0)).all()
        assert set(pred.service) <= {SERVICE_EMBB, SERVICE_URLLC}

    def test_zeroed_model(self):
        m = self.model()
        for p in (m.head_service, m.head_prb, m.head_power):
            p.w.data[:] = 0.0
            p.b.data[:] = 0.0
        pred = predict_allocation(m, np.ones((3, 4, 7)))
        assert (pred.prb_frac == 0).all()
        assert (pred.power == 0).all()
        assert (pred.service == SERVICE_EMBB).all()   # argmax tie rule

    def test_inference_deterministic(self):
        x = np.random.default_rng(2).normal(size=(3, 4, 7))
        m = self.model()
        a = predict_allocation(m, x)
        b = predict_allocation(m, x)
        assert (a.service_logits == b.service_logits).all()
        assert (a.power == b.power).all()


class TestDiscretize:
    def layout(self, phi=0.5):
        return default_scenario().layout(phi)   # o_ur=2, o_em=3

    def test_zero_fraction(self):
        slots = discretize_prbs(np.zeros(2), np.zeros(2, dtype=int),
                                self.layout())
        assert all(len(s) == 0 for s in slots)

    def test_full_fraction_takes_slice(self):
        slots = discretize_prbs(np.array([1.0]),
                                np.array([SERVICE_EMBB]), self.layout())
        assert list(slots[0]) == [0, 1, 2]

    def test_round_half_up(self):
        slots = discretize_prbs(np.array([0.5]),
                                np.array([SERVICE_EMBB]), self.layout())
        assert len(slots[0]) == 2   # 0.5 * 3 = 1.5 -> 2

    def test_urllc_places_before_embb(self):
        # both want the full carrier; slices are disjoint so no contention,
        # but within uRLLC the lower index goes first
        slots = discretize_prbs(np.array([1.0, 1.0]),
                                np.array([SERVICE_URLLC, SERVICE_URLLC]),
                                self.layout())
        assert list(slots[0]) == [0, 1]
        assert len(slots[1]) == 0

    def test_never_outside_slice(self):
        rng = np.random.default_rng(3)
        lay = self.layout()
        for _ in range(50):
            frac = rng.uniform(0, 1, 4)
            svc = rng.integers(0, 2, 4)
            slots = discretize_prbs(frac, svc, lay)
            for u, rbs in enumerate(slots):
                cap = lay.o_ur if svc[u] == SERVICE_URLLC else lay.o_em
                assert all(0 <= r < cap for r in rbs)

    def test_orthogonal(self):
        rng = np.random.default_rng(4)
        lay = self.layout()
        for _ in range(50):
            svc = rng.integers(0, 2, 5)
            slots = discretize_prbs(rng.uniform(0, 1, 5), svc, lay)
            used = [(svc[u], r) for u, rbs in enumerate(slots) for r in rbs]
            assert len(used) == len(set(used))


class TestAssignPower:
    def setup_case(self, phi=0.5):
        sc = default_scenario(num_ues=2)
        lay = sc.layout(phi)
        gains_ur = np.ones((lay.o_ur, 2))
        return sc, lay, gains_ur

    def test_even_split(self):
        sc, lay, g = self.setup_case()
        placements = [np.array([0, 1]), np.empty(0, dtype=int)]
        grid, rep = assign_power(placements, np.array([SERVICE_EMBB, 0]),
                                 np.array([0.4, 0.0]), g, sc, lay)
        assert np.allclose(grid.p_em[0, [0, 1], 0], 0.2)
        assert not rep.rescaled

    def test_proportional_rescale(self):
        sc, lay, g = self.setup_case()
        placements = [np.array([0]), np.array([1])]
        grid, rep = assign_power(placements, np.array([0, 0]),
                                 np.array([1.0, 1.0]), g, sc, lay)
        assert rep.rescaled
        assert np.allclose(grid.p_em[0, 0, 0], 0.5)
        assert np.allclose(grid.p_em[0, 1, 1], 0.5)

    def test_floor_raise_keeps_feasible(self):
        sc, lay, g = self.setup_case()
        g = g.copy()
        g[0, 0] = 1e-12   # tiny gain: floor = noise/g = 0.1 W
        placements = [np.array([0]), np.array([0])]
        svc = np.array([SERVICE_URLLC, SERVICE_EMBB])
        grid, _ = assign_power(placements, svc, np.array([1e-6, 0.95]),
                               g, sc, lay)
        rep = check_power_feasible(grid, sc.p_max, sc.noise, sc.snr_floor,
                                   gains_ur=np.where(grid.psi_ur > 0,
                                                     g[None], 1.0))
        assert rep.feasible
        assert grid.p_ur[0, 0, 0] >= sc.noise * sc.snr_floor / 1e-12 - 1e-15

    def test_shedding_when_floors_exceed_budget(self):
        sc, lay, g = self.setup_case()
        g = g.copy()
        g[:, 0] = 1e-13 / 0.8   # floor 0.8 W per RB, two RBs exceed 1 W
        placements = [np.array([0, 1]), np.empty(0, dtype=int)]
        svc = np.array([SERVICE_URLLC, SERVICE_EMBB])
        grid, rep = assign_power(placements, svc, np.array([0.1, 0.0]),
                                 g, sc, lay)
        assert len(rep.shed) == 1
        assert grid.psi_ur[0].sum() == 1
        fr = check_power_feasible(grid, sc.p_max, sc.noise, sc.snr_floor)
        assert fr.feasible

    def test_random_grids_always_feasible(self):
        sc = default_scenario(num_ues=4)
        rng = np.random.default_rng(5)
        for _ in range(100):
            lay = sc.layout(rng.uniform(0, sc.phi_max))
            gains = rng.uniform(1e-2, 2.0, size=(max(lay.o_ur, 1), 4))
            svc = rng.integers(0, 2, 4)
            frac = rng.uniform(0, 1, 4)
            pwr = rng.uniform(0, sc.p_max, 4)
            slots = discretize_prbs(frac, svc, lay)
            grid, _ = assign_power(slots, svc, pwr,
                                   gains[:lay.o_ur], sc, lay)
            gur = np.where(grid.psi_ur > 0, gains[:lay.o_ur][None], 1.0)
            rep = check_power_feasible(grid, sc.p_max, sc.noise,
                                       sc.snr_floor, gains_ur=gur)
            assert rep.feasible, rep.violations


def small_instance(seed=0, o_em=1, o_ur=2, ues=2, queue=(2000.0, 0.0),
                   em_demand=(1.0, 1.0), levels=(0.5, 1.0)):
    sc = default_scenario(num_ues=ues)
    rng = np.random.default_rng(seed)
    return OracleInstance(
        gains_em=rng.uniform(0.5, 2.0, (o_em, ues)),
        gains_ur=rng.uniform(0.5, 2.0, (o_ur, ues)),
        ur_queue_bits=np.array(queue, dtype=float)[:ues],
        em_demand_bits=np.array(em_demand, dtype=float)[:ues],
        sc=sc, layout=sc.layout(0.5), levels=levels)


class TestOracle:
    def test_single_embb_rb_gets_full_power(self):
        inst = small_instance(o_em=1, o_ur=0, ues=1, queue=(0.0,),
                              em_demand=(1.0,), levels=(1.0,))
        res = oracle_allocate(inst, lam=0.0)
        assert res.feasible
        assert res.assign[0] == (0, 1.0)
        assert res.grid.p_em[0, 0, 0] == inst.sc.p_max

    def test_zero_demand_all_zero_grid(self):
        inst = small_instance(queue=(0.0, 0.0), em_demand=(0.0, 0.0))
        res = oracle_allocate(inst, lam=1.0)
        assert res.feasible
        assert all(c is None for c in res.assign)
        assert res.objective == 0.0

    def test_oracle_beats_every_alternative(self):
        for seed in range(10):
            inst = small_instance(seed=seed)
            lam = [0.0, 0.5, 2.0][seed % 3]
            res = oracle_allocate(inst, lam)
            for _, em_total, ur_rate in enumerate_grids(inst):
                obj, _ = instance_objective(inst, em_total, ur_rate, lam)
                assert res.objective >= obj - 1e-12

    def test_latency_monotone_in_lambda(self):
        for seed in range(10):
            inst = small_instance(seed=seed, queue=(3000.0, 1500.0))
            prev = np.inf
            for lam in (0.0, 0.5, 1.0, 2.0, 10.0):
                lat = oracle_allocate(inst, lam).worst_latency
                assert lat <= prev + 1e-12
                prev = lat

    def test_bounds_enforced(self):
        sc = default_scenario(num_ues=3)
        with pytest.raises(ValueError):
            OracleInstance(gains_em=np.ones((2, 3)),
                           gains_ur=np.ones((2, 3)),
                           ur_queue_bits=np.zeros(3),
                           em_demand_bits=np.ones(3),
                           sc=sc, layout=sc.layout(0.5))

    def test_grids_pass_feasibility(self):
        inst = small_instance(seed=3)
        res = oracle_allocate(inst, 1.0)
        rep = check_power_feasible(
            res.grid, inst.sc.p_max, inst.sc.noise, inst.sc.snr_floor,
            gains_ur=np.where(res.grid.psi_ur > 0, inst.gains_ur[None], 1.0))
        assert rep.feasible


class TestTraining:
    def test_loss_decreases_and_logs(self):
        import io
        data = make_allocator_dataset(64, f_in=7, t_mini=2, p_max=1.0,
                                      seed=0)
        m = AllocatorModel(f_in=7, p_max=1.0, seed=0)
        buf = io.StringIO()
        hist = train_allocator(data, m, epochs=3, lr=1e-2, seed=0, log=buf)
        first = sum(hist[0][1:4])
        last = sum(hist[-1][1:4])
        assert last < first
        assert buf.getvalue().startswith(
            "epoch,loss_service,loss_prb,loss_power,acc_service")

    def test_same_seed_identical(self):
        data = make_allocator_dataset(32, f_in=7, t_mini=2, p_max=1.0,
                                      seed=1)
        finals = []
        for _ in range(2):
            m = AllocatorModel(f_in=7, p_max=1.0, seed=4)
            train_allocator(data, m, epochs=1, seed=4)
            finals.append({k: p.data.copy() for k, p in m.params().items()})
        for k in finals[0]:
            assert (finals[0][k] == finals[1][k]).all()

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_allocator((np.zeros((0, 2, 7)), np.zeros(0, dtype=int),
                             np.zeros(0), np.zeros(0)),
                            AllocatorModel(7, 1.0))
