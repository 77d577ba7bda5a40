import numpy as np
import pytest

from conftest import build_model
from twolevel import forms
from twolevel.analysis import (drift_generator_view, drift_rates_view,
                               qv_rates_view, tf_exp_x, tf_exp_y, tf_mass)
from twolevel.errors import EllipticityViolated
from twolevel.params import Population, channel_rates, competition_field, raw_effective
from twolevel.scaling import (RescaledMeasure, ScalingRegime, empirical_measure,
                              make_effective, rescale_params_h2, rescale_params_h3)


class TestH2:
    def test_competition_unit_mass(self):
        # U == 1, K = 10, I = 10 identical individuals: field sums to 1
        mp = build_model(U=1.0, alpha=1.0, B=1.0)
        eff = rescale_params_h2(mp, ScalingRegime(K=10, K1=10, K2=10, tag="H2"))
        traits = np.full((10, 1), 0.5)
        assert competition_field(np.array([0.5]), traits, eff) == pytest.approx(1.0)

    def test_lambda_rescaled(self):
        mp = build_model(lam=((2.0, 0.0), (0.0, 1.0)))
        eff = rescale_params_h2(mp, ScalingRegime(K=4, K1=4, K2=8, tag="H2"))
        assert eff.lam_eff[0, 0] == pytest.approx(0.5)
        assert eff.lam_eff[1, 1] == pytest.approx(1.0 / 8.0)

    def test_identity_scaling(self):
        mp = build_model(B=1.3, D=0.4, alpha=0.5, U=0.7, b1=0.2, d1=0.1,
                         beta1=0.3, lam=((1.0, 0.5), (0.5, 1.0)))
        raw = raw_effective(mp)
        h2 = rescale_params_h2(mp, ScalingRegime(K=1, K1=1, K2=1, tag="H2"))
        for args in [(np.array([0.5]), 3, 2, 1.1), (np.array([0.2]), 0, 7, 0.0)]:
            assert tuple(channel_rates(*args, raw)) == tuple(channel_rates(*args, h2))

    def test_rescaled_cell_arguments(self):
        # B(x, y1, y2) evaluated at (n1/K1, n2/K2) under the equality form
        from twolevel.params import RateFn
        mp = build_model(B=RateFn("affine_y", (1.0, 2.0, 0.0)))
        eff = rescale_params_h2(mp, ScalingRegime(K=10, K1=5, K2=5, tag="H2"))
        cr = channel_rates(np.array([0.5]), 10, 0, 0.0, eff)
        # y1 = 10/5 = 2 so B = 1 + 2*2 = 5, all clonal
        assert cr.clonal_birth == pytest.approx(5.0)


class TestH3:
    def _model(self):
        return build_model(B=0.5, D=0.5, Gamma=1.0, gamma=1.0, sigma=1.0,
                           p=0.5, b1=2.0, d1=1.0)

    def test_accelerated_individual_birth(self):
        eff = rescale_params_h3(self._model(), ScalingRegime(K=100, K1=100, K2=100,
                                                             eta=1.0, tag="H3-super"))
        cr = channel_rates(np.array([0.5]), 0, 0, 0.0, eff)
        assert cr.clonal_birth + cr.mutant_birth == pytest.approx(100.5)

    def test_accelerated_cell_birth(self):
        eff = rescale_params_h3(self._model(), ScalingRegime(K=100, K1=50, K2=50,
                                                             eta=1.0, tag="H3-super"))
        cr = channel_rates(np.array([0.5]), 1, 0, 0.0, eff)
        assert cr.cell1_birth == pytest.approx(52.0)

    def test_mutation_std_shrinks(self):
        eff = rescale_params_h3(self._model(), ScalingRegime(K=100, K1=100, K2=100,
                                                             eta=1.0, tag="H3-super"))
        assert eff.mut_std_at(0.5) == pytest.approx(0.1)

    def test_ellipticity_guard(self):
        mp = build_model(B=0.5, D=0.5, Gamma=1.0, gamma=0.0, sigma=1.0, p=0.5)
        with pytest.raises(EllipticityViolated):
            rescale_params_h3(mp, ScalingRegime(K=100, eta=1.0, tag="H3-super"))


class TestEmpiricalMeasure:
    def test_unit_total_mass(self):
        mp = build_model(B=1.0)
        eff = make_effective(mp, ScalingRegime(K=7, K1=7, K2=7, tag="H2"))
        pop = Population(np.full((7, 1), 0.5), [1] * 7, [0] * 7, eff)
        assert empirical_measure(pop).mass == pytest.approx(1.0)

    def test_zero_measure(self):
        mp = build_model(B=1.0)
        eff = make_effective(mp, ScalingRegime(K=7, K1=7, K2=7, tag="H2"))
        pop = Population(np.zeros((0, 1)), [], [], eff)
        m = empirical_measure(pop)
        assert m.mass == 0.0
        assert m.pair(lambda x: 1.0, lambda y: y, lambda y: 1.0) == 0.0

    def test_weight_arithmetic(self):
        mp = build_model(B=1.0)
        eff = make_effective(mp, ScalingRegime(K=4, K1=6, K2=6, tag="H2"))
        pop = Population(np.full((1, 1), 0.5), [6], [0], eff)
        m = empirical_measure(pop)
        assert m.pair(lambda x: 1.0, lambda y: y, lambda y: 1.0) == pytest.approx(1.0 / 4.0)

    def test_pairing_definition_audit(self):
        rng = np.random.default_rng(9)
        mp = build_model(B=1.0)
        eff = make_effective(mp, ScalingRegime(K=5, K1=3, K2=2, tag="H2"))
        pop = Population(rng.uniform(0, 1, (12, 1)), rng.integers(0, 9, 12),
                         rng.integers(0, 9, 12), eff)
        m = empirical_measure(pop)
        f = lambda x: np.cos(x[0])
        g1 = lambda y: y * y
        g2 = lambda y: np.exp(-y)
        direct = sum(f(pop.x[i]) * g1(pop.n1[i] / 3) * g2(pop.n2[i] / 2)
                     for i in range(12)) / 5
        assert m.pair(f, g1, g2) == pytest.approx(direct, rel=1e-15)


class TestDriftOracle:
    def test_rates_view_equals_generator_view(self):
        rng = np.random.default_rng(17)
        mp = build_model(B=1.3, D=0.2, alpha=0.4, U=0.6, p=0.35, mut_std=0.1,
                         b1=0.5, b2=0.3, d1=0.2, d2=0.1, beta1=0.4, beta2=0.6,
                         lam=((1.0, 0.4), (0.3, 0.8)))
        for regime in (ScalingRegime(),
                       ScalingRegime(K=8, K1=5, K2=3, tag="H2")):
            eff = make_effective(mp, regime)
            pop = Population(rng.uniform(0.1, 0.9, (15, 1)),
                             rng.integers(0, 12, 15), rng.integers(0, 12, 15), eff)
            for tf in (tf_mass(), tf_exp_y(1.0, 0.5), tf_exp_x(0.8)):
                a = drift_rates_view(pop, tf)
                b = drift_generator_view(pop, tf)
                assert a == pytest.approx(b, rel=1e-9)

    def test_h3_drift_consistency(self):
        rng = np.random.default_rng(21)
        mp = build_model(B=0.2, D=0.2, Gamma=0.7, gamma=0.5, sigma=0.8, p=0.4,
                         b1=0.5, b2=0.3, d1=0.2, d2=0.1, beta1=0.4, beta2=0.6,
                         lam=((1.0, 0.4), (0.3, 0.8)))
        eff = make_effective(mp, ScalingRegime(K=16, K1=8, K2=8, eta=0.5,
                                               tag="H3-deterministic"))
        pop = Population(rng.uniform(0.1, 0.9, (10, 1)),
                         rng.integers(0, 20, 10), rng.integers(0, 20, 10), eff)
        for tf in (tf_mass(), tf_exp_y(1.0, 1.0)):
            assert drift_rates_view(pop, tf) == pytest.approx(
                drift_generator_view(pop, tf), rel=1e-9)

    def test_qv_nonnegative(self):
        rng = np.random.default_rng(3)
        mp = build_model(B=1.0, D=0.3, alpha=0.2, U=0.5, b1=0.4, d1=0.2,
                         beta1=0.3, lam=((1.0, 0.2), (0.1, 0.9)))
        eff = make_effective(mp, ScalingRegime(K=4, K1=4, K2=4, tag="H2"))
        pop = Population(rng.uniform(0, 1, (8, 1)), rng.integers(0, 6, 8),
                         rng.integers(0, 6, 8), eff)
        assert qv_rates_view(pop, tf_mass()) >= 0
