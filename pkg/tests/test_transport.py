import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.stats import linregress

from conftest import build_model
from twolevel.meanfield import meanfield_constant_solve
from twolevel.params import raw_effective
from twolevel.transport import gaussian_bump, make_grid, transport_mild_solve


def bump_grid(ny=40, ymax=0.25, nx=2):
    g = make_grid(0.0, 1.0, nx, ymax, ny, ymax, ny)
    return gaussian_bump(g, 0.5, 0.07, 0.07, 0.2, 0.035, 0.035, mass=1.0)


class TestExponentialGrowth:
    def test_field_matches_exact_exponential(self):
        # transport off, competition off: phi_t = phi_0 exp((B - D) t)
        mp = build_model(B=0.8, D=0.3)
        g = bump_grid(ny=24)
        res = transport_mild_solve(g, raw_effective(mp), T=2.0, dt=0.02,
                                   out_every=100)
        exact = g.vals * np.exp(0.5 * 2.0)
        err = np.abs(res.snapshots[-1].vals - exact).max() / exact.max()
        assert err < 1e-6


class TestMassConsistency:
    def test_tracks_moment_ode(self):
        mp = build_model(B=0.5, D=0.1, alpha=1.0, U=0.25, b1=0.1, b2=0.1,
                         beta1=1.0, beta2=1.0, lam=((2.0, 0.5), (0.5, 2.0)))
        g = bump_grid()
        res = transport_mild_solve(g, raw_effective(mp), T=5.0, dt=0.02,
                                   out_every=25)
        ode = solve_ivp(lambda t, m: 0.4 * m - 0.25 * m * m, [0, 5], [g.mass],
                        rtol=1e-11, atol=1e-13, t_eval=res.times).y[0]
        assert np.abs(res.mass - ode).max() / ode.max() < 0.01

    def test_mutation_only_mass_rate(self):
        # B = Bp (p = 1), transport and death off: d<phi,1>/dt = B <phi,1>
        mp = build_model(B=0.3, p=1.0, mut_std=0.08)
        g = make_grid(0.0, 1.0, 24, 0.2, 6, 0.2, 6)
        g = gaussian_bump(g, 0.3, 0.05, 0.05, 0.05, 0.04, 0.04, mass=1.0)
        res = transport_mild_solve(g, raw_effective(mp), T=2.0, dt=0.02,
                                   out_every=10)
        fit = linregress(res.times, np.log(res.mass))
        assert fit.slope == pytest.approx(0.3, abs=1e-4)
        # the trait marginal spreads (x-smoothing of the initial profile)
        sl0 = g.vals.sum(axis=(1, 2))
        slT = res.snapshots[-1].vals.sum(axis=(1, 2))
        def spread(sl):
            mu = np.average(g.x, weights=sl)
            return np.sqrt(np.average((g.x - mu) ** 2, weights=sl))
        assert spread(slT) > spread(sl0) * 1.2

    def test_nonnegativity(self):
        mp = build_model(B=0.5, D=0.1, alpha=1.0, U=0.25, b1=0.1, b2=0.1,
                         beta1=1.0, beta2=1.0, lam=((2.0, 0.5), (0.5, 2.0)))
        g = bump_grid()
        res = transport_mild_solve(g, raw_effective(mp), T=3.0, dt=0.02,
                                   out_every=50)
        for snap in res.snapshots:
            assert snap.vals.min() >= 0.0


class TestPicard:
    def test_distances_non_increasing_after_first(self):
        mp = build_model(B=0.5, D=0.1, alpha=1.0, U=0.25, b1=0.1, b2=0.1,
                         beta1=1.0, beta2=1.0, lam=((2.0, 0.5), (0.5, 2.0)))
        g = bump_grid()
        res = transport_mild_solve(g, raw_effective(mp), T=1.0, dt=0.02,
                                   out_every=10)
        for dists in res.picard_distances:
            for i in range(1, len(dists)):
                assert dists[i] <= dists[i - 1]


class TestRefinement:
    def test_halving_steps_improves_observables(self):
        mp = build_model(B=0.5, D=0.1, alpha=1.0, U=0.25, b1=0.1, b2=0.1,
                         beta1=1.0, beta2=1.0, lam=((2.0, 0.5), (0.5, 2.0)))

        def obs_err(ny, dt):
            g = make_grid(0.0, 1.0, 2, 0.25, ny, 0.25, ny)
            g = gaussian_bump(g, 0.5, 0.07, 0.07, 0.2, 0.035, 0.035, mass=1.0)
            X, Y1, Y2 = np.meshgrid(g.x, g.y1, g.y2, indexing="ij")
            w = (g.vals * g.vol).ravel()
            keep = w > 1e-14
            y0 = np.stack([Y1.ravel()[keep], Y2.ravel()[keep]], axis=1)
            traj = meanfield_constant_solve(np.full((keep.sum(), 1), 0.5), y0,
                                            w[keep], mp, T=3.0, dt_out=3.0)
            res = transport_mild_solve(g, raw_effective(mp), T=3.0, dt=dt,
                                       out_every=int(3.0 / dt))
            snap = res.snapshots[-1]
            m_p = traj.mass[-1]
            m_g = snap.moment("mass")
            return np.array([abs(snap.moment("y1") / m_g - traj.moment(-1, "y1") / m_p),
                             abs(snap.moment("y1sq") / m_g - traj.moment(-1, "y1sq") / m_p)])

        coarse = obs_err(32, 0.02)
        fine = obs_err(64, 0.01)
        assert np.all(coarse / fine >= 1.5)
