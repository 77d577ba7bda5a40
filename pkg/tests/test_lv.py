import numpy as np
import pytest
from scipy.integrate import solve_ivp

from twolevel.lv import (LVParams, lv_equilibrium, lv_flow, lv_flow_many,
                         lv_params_at)
from conftest import build_model


def random_lvp(rng):
    return LVParams(
        r1=rng.uniform(0.1, 2.0), r2=rng.uniform(0.1, 2.0),
        beta1=rng.uniform(0.2, 2.0), beta2=rng.uniform(0.2, 2.0),
        lam=[[rng.uniform(0.3, 2.0), rng.uniform(0.0, 1.5)],
             [rng.uniform(0.0, 1.5), rng.uniform(0.3, 2.0)]])


class TestFlow:
    def test_zero_is_absorbing(self):
        lvp = LVParams(1.0, 0.7, 1.0, 1.0, [[1.0, 0.3], [0.2, 1.0]])
        for t in (0.5, 3.0, 50.0):
            assert np.all(lv_flow(0.0, [0.0, 0.0], 0.0, t, lvp) == 0.0)

    def test_identity_at_equal_times(self):
        lvp = LVParams(1.0, 0.7, 1.0, 1.0, [[1.0, 0.3], [0.2, 1.0]])
        y = np.array([0.4, 0.9])
        assert np.array_equal(lv_flow(0.0, y, 2.0, 2.0, lvp), y)

    def test_axis_invariance_exact(self):
        lvp = LVParams(1.0, 0.7, 1.0, 1.0, [[1.0, 0.3], [0.2, 1.0]])
        out = lv_flow(0.0, [0.0, 0.5], 0.0, 10.0, lvp)
        assert out[0] == 0.0 and out[1] > 0

    def test_logistic_closed_form(self):
        # decoupled system: each coordinate is an exact logistic
        lvp = LVParams(1.2, 0.5, 1.0, 2.0, [[2.0, 0.0], [0.0, 0.7]])
        y0 = np.array([0.1, 0.9])
        for t in (0.5, 2.0, 7.0):
            out = lv_flow(0.0, y0, 0.0, t, lvp)
            for i, (r, bl) in enumerate([(1.2, 1.0 * 2.0), (0.5, 2.0 * 0.7)]):
                cap = r / bl
                exact = cap * y0[i] * np.exp(r * t) / (cap + y0[i] * (np.exp(r * t) - 1))
                assert out[i] == pytest.approx(exact, abs=1e-7)

    def test_flow_property_random(self):
        rng = np.random.default_rng(2024)
        for _ in range(30):
            lvp = random_lvp(rng)
            y = rng.uniform(0, 2, 2)
            s, u, t = np.sort(rng.uniform(0, 10, 3))
            z = lv_flow(0.0, y, s, u, lvp)
            a = lv_flow(0.0, z, u, t, lvp)
            b = lv_flow(0.0, y, s, t, lvp)
            assert np.max(np.abs(a - b)) <= 1e-7

    def test_against_scipy_rk45(self):
        # independent integrator oracle
        rng = np.random.default_rng(7)
        for _ in range(10):
            lvp = random_lvp(rng)
            y0 = rng.uniform(0, 1.5, 2)

            def rhs(t, y):
                l = lvp.lam
                return [y[0] * (lvp.r1 - lvp.beta1 * (l[0, 0] * y[0] + l[0, 1] * y[1])),
                        y[1] * (lvp.r2 - lvp.beta2 * (l[1, 0] * y[0] + l[1, 1] * y[1]))]

            ref = solve_ivp(rhs, [0, 5.0], y0, rtol=1e-10, atol=1e-12).y[:, -1]
            out = lv_flow(0.0, y0, 0.0, 5.0, lvp)
            assert np.max(np.abs(out - ref)) < 1e-6

    def test_boundedness(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            lvp = random_lvp(rng)
            y0 = rng.uniform(0, 3, 2)
            caps = [max(y0[0], lvp.r1 / (lvp.beta1 * lvp.lam[0, 0])),
                    max(y0[1], lvp.r2 / (lvp.beta2 * lvp.lam[1, 1]))]
            for t in (0.5, 2.0, 10.0, 100.0):
                out = lv_flow(0.0, y0, 0.0, t, lvp)
                assert out[0] <= caps[0] + 1e-8
                assert out[1] <= caps[1] + 1e-8

    def test_flow_many_matches_single(self):
        lvp = LVParams(1.0, 0.7, 1.0, 1.0, [[1.0, 0.3], [0.2, 1.0]])
        ys = np.array([[0.1, 0.2], [0.5, 0.9], [0.0, 1.4]])
        batch = lv_flow_many(ys, 0.0, 3.0, lvp)
        for i in range(3):
            single = lv_flow(0.0, ys[i], 0.0, 3.0, lvp)
            assert np.array_equal(batch[i], single)


class TestEquilibrium:
    def test_decoupled_coexistence(self):
        lvp = LVParams(1.0, 0.8, 2.0, 1.0, [[0.5, 0.0], [0.0, 2.0]])
        rep = lv_equilibrium(lvp)
        assert rep.case == "coexistence"
        assert rep.pi == pytest.approx([1.0 / (2.0 * 0.5), 0.8 / (1.0 * 2.0)])

    def test_symmetric_interior_point(self):
        rep = lv_equilibrium(LVParams(1, 1, 1, 1, [[2, 1], [1, 2]]))
        assert rep.case == "coexistence"
        assert rep.pi == pytest.approx([1 / 3, 1 / 3], abs=1e-12)
        # long-horizon flow confirmation
        out = lv_flow(0.0, [0.9, 0.2], 0.0, 1e3, rep and LVParams(1, 1, 1, 1, [[2, 1], [1, 2]]))
        assert np.max(np.abs(out - rep.pi)) < 1e-4

    def test_boundary_one(self):
        # r2 l11 - r1 l21 < 0 and r1 l22 - r2 l12 > 0: type 1 excludes type 2
        lvp = LVParams(1.0, 0.4, 1.0, 1.0, [[1.0, 0.2], [1.5, 1.0]])
        rep = lv_equilibrium(lvp)
        assert rep.cond1 < 0 < rep.cond2
        assert rep.case == "boundary-1"
        assert rep.pi == pytest.approx([1.0, 0.0])
        out = lv_flow(0.0, [0.3, 0.8], 0.0, 1e3, lvp)
        assert np.max(np.abs(out - rep.pi)) < 1e-4

    def test_bistable_unclassified(self):
        # both main conditions negative: founder control, no single limit
        lvp = LVParams(1.0, 1.0, 1.0, 1.0, [[1.0, 2.0], [2.0, 1.0]])
        rep = lv_equilibrium(lvp)
        assert rep.cond1 < 0 and rep.cond2 < 0
        assert rep.case == "unclassified"

    def test_nonpositive_rates_unclassified(self):
        rep = lv_equilibrium(LVParams(-0.1, 1.0, 1.0, 1.0, [[1, 0], [0, 1]]))
        assert rep.case == "unclassified"

    def test_model_params_bridge(self):
        mp = build_model(b1=0.12, d1=0.02, b2=0.11, d2=0.01, beta1=1.0,
                         beta2=1.0, lam=((2.0, 0.5), (0.5, 2.0)))
        lvp = lv_params_at(mp, 0.5)
        assert lvp.r1 == pytest.approx(0.1)
        assert lvp.r2 == pytest.approx(0.1)
