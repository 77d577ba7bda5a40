import numpy as np
import pytest
from scipy.stats import ks_2samp

from conftest import build_model
from twolevel import forms
from twolevel.engine import (SimState, simulate, simulate_reference, step,
                             total_rate)
from twolevel.errors import EventBudgetExceeded, Extinct, RejectionStall
from twolevel.params import Population, raw_effective
from twolevel.scaling import ScalingRegime, make_effective
import twolevel._kernels as k


def run(eff, x0, n1, n2, **kw):
    kw.setdefault("T", 1.0)
    kw.setdefault("obs_times", np.linspace(0, kw["T"], 6))
    kw.setdefault("seed", 123)
    return simulate(eff, x0, n1, n2, **kw)


class TestTotalRate:
    def test_empty_population(self):
        mp = build_model(B=2.0)
        pop = Population(np.zeros((0, 1)), [], [], raw_effective(mp))
        assert total_rate(SimState(pop)) == 0.0

    def test_single_individual_constant_birth(self):
        mp = build_model(B=2.0)
        pop = Population(np.array([[0.5]]), [0], [0], raw_effective(mp))
        assert total_rate(SimState(pop)) == pytest.approx(2.0)

    def test_additivity_without_competition(self):
        mp = build_model(B=0.7, D=0.3, b1=0.2, d1=0.1, beta1=0.5,
                         lam=((1.0, 0.0), (0.0, 1.0)))
        eff = raw_effective(mp)
        one = Population(np.array([[0.5]]), [2], [0], eff)
        three = Population(np.full((3, 1), 0.5), [2] * 3, [0] * 3, eff)
        assert total_rate(SimState(three)) == pytest.approx(3 * total_rate(SimState(one)))


class TestStepSemantics:
    def test_clonal_copy(self):
        mp = build_model(B=1.0)  # only clonal births possible
        pop = Population(np.array([[0.3]]), [4], [7], raw_effective(mp))
        st = SimState(pop, rng=np.random.default_rng(1))
        ev, _ = step(st)
        assert ev.kind == "clonal_birth"
        assert pop.size == 2
        assert pop.x[1, 0] == 0.3 and pop.n1[1] == 4 and pop.n2[1] == 7

    def test_cell_birth_increments_one_count(self):
        mp = build_model(b1=1.0)
        pop = Population(np.array([[0.3]]), [4], [7], raw_effective(mp))
        st = SimState(pop, rng=np.random.default_rng(1))
        ev, _ = step(st)
        assert ev.kind == "cell1_birth"
        assert pop.n1[0] == 5 and pop.n2[0] == 7 and pop.size == 1

    def test_death_of_singleton_extinguishes(self):
        mp = build_model(D=1.0)
        pop = Population(np.array([[0.3]]), [1], [1], raw_effective(mp))
        st = SimState(pop, rng=np.random.default_rng(1))
        ev, _ = step(st)
        assert ev.kind == "death" and pop.size == 0
        with pytest.raises(Extinct):
            step(st)

    def test_mutant_birth_lands_in_box(self):
        mp = build_model(B=5.0, p=1.0, mut_std=0.2)
        pop = Population(np.array([[0.9]]), [0], [0], raw_effective(mp))
        st = SimState(pop, rng=np.random.default_rng(3))
        ev, _ = step(st)
        assert ev.kind == "mutant_birth"
        assert 0.0 <= pop.x[1, 0] <= 1.0
        assert ev.offset is not None


class TestFastEngine:
    def test_determinism_bitwise(self):
        mp = build_model(B=1.0, D=0.4, alpha=0.3, U=0.2, p=0.2, b1=0.3, d1=0.1,
                         beta1=0.2, lam=((1.0, 0.2), (0.2, 1.0)))
        eff = raw_effective(mp)
        a = run(eff, np.array([[0.5]]), [2] * 8, [1] * 8, n_replicates=16)
        b = run(eff, np.array([[0.5]]), [2] * 8, [1] * 8, n_replicates=16)
        assert np.array_equal(a.obs, b.obs)
        assert np.array_equal(a.meta, b.meta)

    def test_pure_death_hits_zero_and_stays(self):
        mp = build_model(B=0.0, D=2.0)
        eff = raw_effective(mp)
        rs = run(eff, np.array([[0.5]]), [0] * 12, [0] * 12, T=30.0,
                 obs_times=np.linspace(0, 30, 31), n_replicates=40)
        mass = rs.col("mass")
        assert np.all(np.diff(mass, axis=1) <= 1e-12)
        assert np.all(mass[:, -1] == 0.0)
        # absorbing: once zero, later grid values stay zero
        for r in range(40):
            z = np.where(mass[r] == 0.0)[0]
            if len(z):
                assert np.all(mass[r, z[0]:] == 0.0)

    def test_all_rates_zero_constant_trajectory(self):
        mp = build_model(B=0.0)
        eff = raw_effective(mp)
        rs = run(eff, np.array([[0.5]]), [3] * 5, [2] * 5, n_replicates=3)
        assert np.all(rs.col("mass") == 5.0)
        assert np.all(rs.col("y1") == 15.0)
        assert np.all(rs.meta[:, k.M_EVENTS] == 0)

    def test_extinction_absorbing_in_event_log(self):
        mp = build_model(B=0.0, D=2.0)
        eff = raw_effective(mp)
        rs = run(eff, np.array([[0.5]]), [0] * 6, [0] * 6, T=50.0,
                 n_replicates=25, log_capacity=64)
        for r in range(25):
            log = rs.logs[r]
            dead = np.where(log["I_after"] == 0)[0]
            assert len(dead) == 1 and dead[0] == len(log["t"]) - 1
            assert rs.meta[r, k.M_EXTINCT_T] == pytest.approx(log["t"][-1])

    def test_branching_mean_oracle(self):
        # linear birth-death B=2, D=1: E<nu_t,1> = I0 exp(t)
        mp = build_model(B=2.0, D=1.0)
        eff = raw_effective(mp)
        nrep = 10_000
        rs = run(eff, np.array([[0.5]]), [0] * 5, [0] * 5, T=1.0,
                 obs_times=np.array([0.0, 0.5, 1.0]), n_replicates=nrep,
                 capacity=2048)
        mean, se = rs.mean_se("mass")
        oracle = 5 * np.exp(rs.times)
        assert np.all(np.abs(mean - oracle) <= 3 * np.maximum(se, 1e-12))

    def test_event_budget_guard(self):
        mp = build_model(B=5.0)
        eff = raw_effective(mp)
        with pytest.raises(EventBudgetExceeded):
            run(eff, np.array([[0.5]]), [0] * 10, [0] * 10, T=5.0,
                event_budget=50, capacity=8192)

    def test_rejection_stall_guard(self):
        from dataclasses import replace
        mp = build_model(B=5.0, p=1.0, mut_std=0.1)
        eff = raw_effective(mp)
        eff = replace(eff, cbar=1e12)  # acceptance probability ~ 1e-12
        with pytest.raises(RejectionStall):
            run(eff, np.array([[0.5]]), [0] * 4, [0] * 4, T=2.0)

    def test_cache_audit_within_tolerance(self):
        mp = build_model(B=1.0, D=0.2, alpha=0.4, U=0.3, p=0.1, b1=0.5, b2=0.4,
                         d1=0.1, d2=0.2, beta1=0.3, beta2=0.2,
                         lam=((1.0, 0.3), (0.2, 1.0)))
        eff = raw_effective(mp)
        rs = run(eff, np.array([[0.5]]), [4] * 20, [3] * 20, T=20.0,
                 n_replicates=4, audit_every=2000, event_budget=5_000_000,
                 capacity=4096)
        assert rs.meta[:, k.M_AUDIT].max() <= 1e-9

    def test_tree_and_linear_modes_agree_in_law(self):
        mp = build_model(B=1.0, D=0.5, b1=0.4, d1=0.1, beta1=0.4,
                         lam=((1.0, 0.0), (0.0, 1.0)))
        eff = raw_effective(mp)
        lin = run(eff, np.array([[0.5]]), [3] * 10, [0] * 10, T=2.0,
                  n_replicates=600, sumtree_threshold=10 ** 9, seed=5)
        tre = run(eff, np.array([[0.5]]), [3] * 10, [0] * 10, T=2.0,
                  n_replicates=600, sumtree_threshold=1, seed=6)
        stat = ks_2samp(lin.col("mass")[:, -1], tre.col("mass")[:, -1])
        assert stat.pvalue > 0.01

    def test_exchangeability_of_storage_order(self):
        # same law under permuted initial storage order (KS at 1 percent)
        mp = build_model(B=1.2, D=0.6, alpha=0.3, U=0.4, b1=0.4, d1=0.2,
                         beta1=0.5, lam=((1.0, 0.4), (0.3, 1.0)))
        eff = raw_effective(mp)
        x = np.linspace(0.1, 0.9, 8)[:, None]
        n1 = np.arange(8, dtype=np.int64)
        n2 = (np.arange(8, dtype=np.int64) % 3)
        a = simulate(eff, x, n1, n2, 2.0, np.array([0.0, 2.0]), seed=100,
                     n_replicates=1000)
        b = simulate(eff, x[::-1].copy(), n1[::-1].copy(), n2[::-1].copy(),
                     2.0, np.array([0.0, 2.0]), seed=200, n_replicates=1000)
        for col in ("mass", "y1", "y2"):
            stat = ks_2samp(a.col(col)[:, -1], b.col(col)[:, -1])
            assert stat.pvalue > 0.01, col

    def test_moment_monitor_flags(self):
        mp = build_model(B=2.0, D=0.2)
        eff = raw_effective(mp)
        rs = run(eff, np.array([[0.5]]), [0] * 10, [0] * 10, T=2.0,
                 n_replicates=8, capacity=16384)
        assert len(rs.moment_flags(mass_ceiling=1.0, n2_ceiling=np.inf)) > 0
        assert len(rs.moment_flags(mass_ceiling=1e9, n2_ceiling=1e18)) == 0

    def test_reference_and_fast_engines_agree_in_law(self):
        mp = build_model(B=1.5, D=0.5, b1=0.5, d1=0.2, beta1=0.4,
                         lam=((1.0, 0.0), (0.0, 1.0)))
        eff = raw_effective(mp)
        fast = run(eff, np.array([[0.5]]), [2] * 6, [0] * 6, T=1.5,
                   obs_times=np.array([0.0, 1.5]), n_replicates=800, seed=9)
        ref_final = []
        for r in range(400):
            traj, _, _ = simulate_reference(eff, np.array([[0.5]]), [2] * 6,
                                            [0] * 6, 1.5, np.array([0.0, 1.5]),
                                            seed=10_000 + r)
            ref_final.append(traj.col("mass")[-1])
        stat = ks_2samp(fast.col("mass")[:, -1], np.array(ref_final))
        assert stat.pvalue > 0.01

    def test_engine_drift_integral_matches_log_reconstruction(self):
        # single individual, only the cell-1 birth channel active, tf = y1:
        # the drift integrand is b1 * n1(t) * a1 * w, piecewise constant
        mp = build_model(B=0.0, b1=0.8)
        eff = make_effective(mp, ScalingRegime(K=2, K1=4, K2=4, tag="H2"))
        tfs = {"y1": (forms.pack("const", [1.0]), forms.pack("coord", []),
                      forms.pack("const", [1.0]))}
        T = 3.0
        rs = simulate(eff, np.array([[0.5]]), [2], [0], T, np.array([0.0, T]),
                      seed=77, n_replicates=1, tfs=tfs, log_capacity=4096)
        log = rs.logs[0]
        n1 = 2
        t_prev = 0.0
        integral = 0.0
        for t, kind in zip(log["t"], log["kind"]):
            integral += (t - t_prev) * 0.8 * n1 * (1 / 4) * (1 / 2)
            assert kind == k.KIND_C1B
            n1 += 1
            t_prev = t
        integral += (T - t_prev) * 0.8 * n1 * (1 / 4) * (1 / 2)
        assert rs.tf_col("y1", "drift_int")[0, -1] == pytest.approx(integral, rel=1e-12)
