import numpy as np
import pytest

from conftest import build_model
from twolevel.errors import CFLViolation
from twolevel.params import raw_effective
from twolevel.reactdiff import reaction_diffusion_solve
from twolevel.transport import gaussian_bump, make_grid, transport_mild_solve


class TestConservation:
    def test_diffusion_only_conserves_mass(self):
        mp = build_model(gamma=0.02, Gamma=0.0, sigma=0.0)
        g = make_grid(0.0, 1.0, 3, 1.0, 40, 1.0, 40)
        g = gaussian_bump(g, 0.5, 0.5, 0.5, 0.2, 0.05, 0.05, mass=1.0)
        res = reaction_diffusion_solve(g, raw_effective(mp, h3=True), T=0.5,
                                       dt=0.005, out_every=20)
        assert abs(res.mass[-1] - res.mass[0]) < 1e-8

    def test_trait_diffusion_conserves_mass(self):
        mp = build_model(gamma=0.0, Gamma=1.0, sigma=0.1, p=0.5)
        g = make_grid(0.0, 1.0, 24, 0.5, 8, 0.5, 8)
        g = gaussian_bump(g, 0.5, 0.25, 0.25, 0.08, 0.1, 0.1, mass=1.0)
        res = reaction_diffusion_solve(g, raw_effective(mp, h3=True), T=0.5,
                                       dt=0.005, out_every=20)
        assert abs(res.mass[-1] - res.mass[0]) < 1e-8
        # the trait marginal actually spreads
        sl0 = g.vals.sum(axis=(1, 2))
        slT = res.snapshots[-1].vals.sum(axis=(1, 2))
        def spread(sl):
            mu = np.average(g.x, weights=sl)
            return np.average((g.x - mu) ** 2, weights=sl)
        assert spread(slT) > spread(sl0)


class TestHeatKernel:
    def test_variance_grows_like_2_gamma_t(self):
        gamma, T = 0.01, 0.5
        mp = build_model(gamma=gamma, Gamma=0.0, sigma=0.0)
        g = make_grid(0.0, 1.0, 2, 1.0, 64, 1.0, 64)
        g = gaussian_bump(g, 0.5, 0.5, 0.5, 0.2, 0.03, 0.03, mass=1.0)
        res = reaction_diffusion_solve(g, raw_effective(mp, h3=True), T=T,
                                       dt=0.0025, out_every=100)
        for which in ("y1", "y2"):
            v0 = g.moment(which + "sq") - g.moment(which) ** 2
            snap = res.snapshots[-1]
            vT = (snap.moment(which + "sq") / snap.mass
                  - (snap.moment(which) / snap.mass) ** 2)
            growth = vT - v0 / g.mass
            assert growth == pytest.approx(2 * gamma * T, rel=0.05)


class TestDegenerateLimit:
    def test_matches_transport_solver(self):
        # Gamma = sigma = gamma = 0 reduces to the transport equation
        mp = build_model(B=0.4, D=0.1, alpha=1.0, U=0.25, b1=0.1, b2=0.1,
                         beta1=1.0, beta2=1.0, lam=((2.0, 0.5), (0.5, 2.0)),
                         gamma=0.0, Gamma=0.0, sigma=0.0)
        g = make_grid(0.0, 1.0, 2, 0.25, 48, 0.25, 48)
        g = gaussian_bump(g, 0.5, 0.07, 0.07, 0.2, 0.035, 0.035, mass=1.0)
        T = 2.0
        rd = reaction_diffusion_solve(g, raw_effective(mp, h3=True), T=T,
                                      dt=0.004, out_every=int(T / 0.004))
        tr = transport_mild_solve(g, raw_effective(mp), T=T, dt=0.02,
                                  out_every=int(T / 0.02))
        a, b = rd.snapshots[-1], tr.snapshots[-1]
        assert a.mass == pytest.approx(b.mass, rel=0.01)
        for which in ("y1", "y2", "y1sq"):
            assert a.moment(which) / a.mass == pytest.approx(
                b.moment(which) / b.mass, rel=0.05)


class TestGuards:
    def test_cfl_violation_raised(self):
        mp = build_model(b1=1.0, b2=1.0, beta1=1.0, beta2=1.0,
                         lam=((2.0, 0.5), (0.5, 2.0)), gamma=0.01, Gamma=0.0,
                         sigma=0.0)
        g = make_grid(0.0, 1.0, 2, 1.0, 64, 1.0, 64)
        g = gaussian_bump(g, 0.5, 0.5, 0.5, 0.2, 0.05, 0.05, mass=1.0)
        with pytest.raises(CFLViolation):
            reaction_diffusion_solve(g, raw_effective(mp, h3=True), T=1.0,
                                     dt=0.5, out_every=1)
