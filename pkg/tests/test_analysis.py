import numpy as np
import pytest

from conftest import build_model
from twolevel.analysis import (martingale_residuals, pair, scaling_exponent_fit,
                               tf_coord, tf_exp_y, tf_mass, weak_distance)
from twolevel.engine import simulate
from twolevel.errors import DegenerateSeries, TierMismatch
from twolevel.lv import LVParams
from twolevel.meanfield import MeasureTrajectory
from twolevel.params import raw_effective
from twolevel.scaling import RescaledMeasure
from twolevel.analysis import limit_drift_integrand


def measure(traits, y1, y2, w):
    return RescaledMeasure(np.atleast_2d(np.asarray(traits, float)).T,
                           np.asarray(y1, float), np.asarray(y2, float), w)


class TestPair:
    def test_unit_tf_gives_mass(self):
        m = measure([0.1, 0.5, 0.9], [1, 2, 3], [0, 0, 1], 0.5)
        assert pair(m, tf_mass()) == pytest.approx(1.5)

    def test_zero_measure(self):
        m = measure([], [], [], 0.5)
        assert pair(m, tf_mass()) == 0.0

    def test_single_atom_product(self):
        m = measure([0.3], [1.0], [2.0], 1.0)
        tf = tf_coord(2)  # (1, 1, y2)
        assert pair(m, tf) == pytest.approx(2.0)
        # product form (1, y1, y2): expect 1 * 1 * 2 = 2
        from twolevel import forms
        from twolevel.analysis import TestFunction
        tf2 = TestFunction("y1y2", forms.pack("const", [1.0]),
                           forms.pack("coord", []), forms.pack("coord", []))
        assert pair(m, tf2) == pytest.approx(2.0)

    def test_linearity_in_measure(self):
        a = measure([0.1, 0.4], [1, 2], [3, 0], 0.25)
        b = measure([0.7], [5], [1], 0.25)
        combined = measure([0.1, 0.4, 0.7], [1, 2, 5], [3, 0, 1], 0.25)
        for tf in (tf_mass(), tf_exp_y(1.0, 1.0)):
            assert pair(combined, tf) == pytest.approx(pair(a, tf) + pair(b, tf))


class TestWeakDistance:
    def test_identical_measures(self):
        m = measure([0.1, 0.5], [1, 2], [0, 1], 0.5)
        assert weak_distance(m, m, [tf_mass(), tf_exp_y(1, 1)]) == 0.0

    def test_lipschitz_shift_bound(self):
        eps = 1e-3
        a = measure([0.5], [1.0], [1.0], 1.0)
        b = measure([0.5], [1.0 + eps], [1.0], 1.0)
        # e^{-y1-y2} is 1-Lipschitz in y1 and bounded by 1
        assert weak_distance(a, b, [tf_exp_y(1, 1)]) <= eps

    def test_reweighted_atoms_identical_pairings(self):
        a = measure([0.2, 0.2], [1, 1], [2, 2], 0.5)
        b = measure([0.2], [1], [2], 1.0)
        assert weak_distance(a, b, [tf_mass(), tf_exp_y(1, 1)]) == 0.0

    def test_unbounded_tf_rejected(self):
        m = measure([0.5], [1.0], [1.0], 1.0)
        with pytest.raises(ValueError):
            weak_distance(m, m, [tf_coord(1)])


class TestMartingaleReport:
    def test_zero_residual_on_frozen_dynamics(self):
        # all rates zero: pairing constant, drift zero, residual identically 0
        from twolevel import forms
        mp = build_model(B=0.0)
        eff = raw_effective(mp)
        one = forms.pack("const", [1.0])
        rs = simulate(eff, np.array([[0.5]]), [2] * 4, [1] * 4, 1.0,
                      np.linspace(0, 1, 5), seed=3, n_replicates=5,
                      tfs={"mass": (one, one, one)})
        rep = martingale_residuals(rs, "mass")
        assert np.all(rep.residuals == 0.0)
        assert np.all(rep.mean == 0.0)

    def test_residual_zero_at_time_zero(self, small_model):
        from twolevel import forms
        eff = raw_effective(small_model)
        one = forms.pack("const", [1.0])
        rs = simulate(eff, np.array([[0.5]]), [3] * 10, [2] * 10, 1.0,
                      np.linspace(0, 1, 5), seed=4, n_replicates=50,
                      tfs={"mass": (one, one, one)})
        rep = martingale_residuals(rs, "mass")
        assert np.all(rep.residuals[:, 0] == 0.0)

    def test_empirical_qv_nonnegative_nondecreasing(self, small_model):
        from twolevel import forms
        eff = raw_effective(small_model)
        one = forms.pack("const", [1.0])
        rs = simulate(eff, np.array([[0.5]]), [3] * 10, [2] * 10, 1.0,
                      np.linspace(0, 1, 9), seed=5, n_replicates=20,
                      tfs={"mass": (one, one, one)})
        eqv = rs.tf_col("mass", "emp_qv")
        assert np.all(eqv >= 0)
        assert np.all(np.diff(eqv, axis=1) >= 0)


class TestTierMismatch:
    def test_limit_drift_rejects_non_c1(self):
        m = measure([0.5], [0.5], [0.5], 1.0)
        lvp = LVParams(0.1, 0.1, 1.0, 1.0, [[2.0, 0.5], [0.5, 2.0]])
        tf = tf_coord(1, cap=1.0)  # capped: bounded tier, no derivative
        with pytest.raises(TierMismatch):
            limit_drift_integrand(m, tf, lvp, B=0.5, D=0.0, alpha=1.0, U0=0.25)

    def test_limit_drift_smooth_tf_ok(self):
        m = measure([0.5], [0.5], [0.5], 1.0)
        lvp = LVParams(0.1, 0.1, 1.0, 1.0, [[2.0, 0.5], [0.5, 2.0]])
        v = limit_drift_integrand(m, tf_exp_y(1.0, 1.0), lvp, B=0.5, D=0.0,
                                  alpha=1.0, U0=0.25)
        assert np.isfinite(v)


class TestScalingFit:
    def test_exact_power_law(self):
        fit = scaling_exponent_fit({64: 1.0 / 64, 256: 1.0 / 256, 1024: 1.0 / 1024})
        assert fit.slope == pytest.approx(-1.0, abs=0.01)

    def test_constant_variance(self):
        fit = scaling_exponent_fit({64: 0.3, 256: 0.3, 1024: 0.3})
        assert fit.slope == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_series_rejected(self):
        with pytest.raises(DegenerateSeries):
            scaling_exponent_fit({64: 0.0, 256: 0.1, 1024: 0.2})

    def test_bootstrap_ci_covers_truth(self):
        rng = np.random.default_rng(0)
        series = {K: rng.normal(0, (1.0 / K) ** 0.5, 400) for K in (64, 256, 1024)}
        fit = scaling_exponent_fit(series, seed=1)
        assert fit.ci_lo <= -1.0 <= fit.ci_hi
        assert fit.slope == pytest.approx(-1.0, abs=0.15)
