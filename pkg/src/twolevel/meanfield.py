"""Mean-field limit: particle solver and stationary states.

In the constant-coefficient mean-field case (B, D, alpha, U constant, p = 0)
the limit flow factorizes exactly: the total mass follows the closed logistic
equation and every atom's cell coordinates ride the Lotka-Volterra flow, so

    v_t = (m(t) / m(0)) * (LV flow pushforward of v_0).

The particle solver below implements that representation; the logistic mass
uses the closed-form solution (tests integrate the mass ODE numerically as an
independent oracle).  The linear-selection case (alpha = alpha1 y1 + alpha2 y2)
only gets stationary-state candidates and a Laplace-transform residual check;
its convergence is a conjecture probe, never an assumption.
"""

import math
from dataclasses import dataclass

import numpy as np

from .lv import LVParams, lv_equilibrium, lv_flow_many, lv_params_at


def logistic_mass(m0, R, aU, t):
    """Mass of the closed logistic equation m' = m (R - aU m) at time t."""
    t = np.asarray(t, dtype=float)
    if m0 == 0.0:
        return np.zeros_like(t) + 0.0
    if aU == 0.0:
        return m0 * np.exp(R * t)
    if R == 0.0:
        return m0 / (1.0 + aU * m0 * t)
    ms = R / aU
    e = np.exp(R * t)
    return ms * m0 * e / (ms + m0 * (e - 1.0))


@dataclass
class MeasureTrajectory:
    """Particle representation of the limit measure on an output grid."""

    times: np.ndarray        # (nt,)
    mass: np.ndarray         # (nt,)
    traits: np.ndarray       # (N, d), frozen
    weights0: np.ndarray     # (N,), weights at t=0 summing to mass[0]
    positions: np.ndarray    # (nt, N, 2)

    def weights(self, it):
        scale = self.mass[it] / self.mass[0] if self.mass[0] > 0 else 0.0
        return self.weights0 * scale

    def pair(self, it, f, g1, g2):
        w = self.weights(it)
        y = self.positions[it]
        vals = np.array([f(self.traits[i]) * g1(y[i, 0]) * g2(y[i, 1])
                         for i in range(len(w))])
        return float((w * vals).sum())

    def moment(self, it, which):
        w = self.weights(it)
        y = self.positions[it]
        if which == "mass":
            return float(w.sum())
        if which == "y1":
            return float((w * y[:, 0]).sum())
        if which == "y2":
            return float((w * y[:, 1]).sum())
        if which == "y1sq":
            return float((w * y[:, 0] ** 2).sum())
        if which == "y2sq":
            return float((w * y[:, 1] ** 2).sum())
        raise KeyError(which)

    def cloud_variance(self, it):
        """Weighted variance of (y1, y2) across the cloud."""
        w = self.weights(it)
        tot = w.sum()
        if tot <= 0:
            return np.zeros(2)
        y = self.positions[it]
        mean = (w[:, None] * y).sum(axis=0) / tot
        return ((w[:, None] * (y - mean) ** 2).sum(axis=0) / tot)


def _require_const(params, names):
    for nm in names:
        fn = getattr(params, nm)
        if not fn.is_const():
            raise ValueError(f"mean-field solver needs constant {nm}")


def meanfield_constant_solve(traits, y0, weights0, params, T, dt_out,
                             atol=1e-10, rtol=1e-8):
    """Evolve a weighted particle cloud under the constant-coefficient limit.

    traits   -- (N, d) frozen trait values (cell rates must be trait-free)
    y0       -- (N, 2) initial cell coordinates
    weights0 -- (N,) initial weights; total mass is their sum
    """
    _require_const(params, ("B", "D", "alpha", "U", "b1", "b2", "d1", "d2",
                            "beta1", "beta2"))
    if not (params.p.is_const() and params.p.const_value() == 0.0):
        raise ValueError("mean-field solver needs p = 0")
    R = params.B.const_value() - params.D.const_value()
    aU = params.alpha.const_value() * params.U.const_value()
    lvp = lv_params_at(params, 0.0)
    times = np.arange(0.0, T + dt_out * 0.5, dt_out)
    n = len(times)
    y0 = np.asarray(y0, dtype=float).reshape(-1, 2)
    positions = np.zeros((n, y0.shape[0], 2))
    positions[0] = y0
    for it in range(1, n):
        positions[it] = lv_flow_many(positions[it - 1], times[it - 1], times[it],
                                     lvp, atol=atol, rtol=rtol)
    mass = logistic_mass(float(np.sum(weights0)), R, aU, times)
    return MeasureTrajectory(
        times=times, mass=mass,
        traits=np.atleast_2d(np.asarray(traits, dtype=float)),
        weights0=np.asarray(weights0, dtype=float), positions=positions)


def stationary_report(params, alpha_linear=None):
    """Stationary mass and cell equilibrium for the mean-field case.

    With constant selection the stationary mass is R/(alpha U) when R > 0 and
    0 otherwise.  With linear selection alpha . y the returned mass is the
    conjectured candidate R/(U alpha . pi) together with the constraint value
    <v_inf, alpha . y> = R/U and the sufficient local-stability condition
    max(r1, r2) < R; those entries are labeled as a conjecture probe.
    """
    _require_const(params, ("B", "D", "U"))
    R = params.B.const_value() - params.D.const_value()
    U = params.U.const_value()
    lvp = lv_params_at(params, 0.0)
    eq = lv_equilibrium(lvp)
    out = {
        "R": R,
        "U": U,
        "case": eq.case,
        "pi1": float(eq.pi[0]),
        "pi2": float(eq.pi[1]),
    }
    if alpha_linear is None:
        _require_const(params, ("alpha",))
        a = params.alpha.const_value()
        out["alpha_kind"] = "constant"
        out["mass"] = R / (a * U) if R > 0 else 0.0
        out["conjecture"] = False
    else:
        a1, a2 = float(alpha_linear[0]), float(alpha_linear[1])
        apy = a1 * eq.pi[0] + a2 * eq.pi[1]
        out["alpha_kind"] = "linear"
        out["mass"] = R / (U * apy) if (R > 0 and apy > 0) else 0.0
        out["constraint_target"] = R / U
        out["stable_sufficient"] = bool(max(lvp.r1, lvp.r2) < R)
        out["conjecture"] = True
    return out


def laplace_stationarity_check(mass, pi, R, U, alpha_linear, lvp, z_samples):
    """Max residual of the stationary Laplace-transform PDE at sample points.

    Plugs the exponential ansatz L(z) = mass * exp(-pi . z) into the displayed
    first-order form of the stationary PDE; all partial derivatives of the
    ansatz are analytic, so the residual is evaluated exactly:

        R L + U L(0) (a1 dL/dz1 + a2 dL/dz2)
          + sum_i [ z_i r_i dL/dz_i
                    + z_i beta_i (l_ii d2L/dz_i^2 + l_ij d2L/dz_i dz_j) ]
    """
    a1, a2 = float(alpha_linear[0]), float(alpha_linear[1])
    p1, p2 = float(pi[0]), float(pi[1])
    r = (lvp.r1, lvp.r2)
    be = (lvp.beta1, lvp.beta2)
    lam = lvp.lam
    worst = 0.0
    l0 = mass
    for z in np.atleast_2d(np.asarray(z_samples, dtype=float)):
        L = mass * math.exp(-(p1 * z[0] + p2 * z[1]))
        dL = (-p1 * L, -p2 * L)
        d2 = ((p1 * p1 * L, p1 * p2 * L), (p1 * p2 * L, p2 * p2 * L))
        res = R * L + U * l0 * (a1 * dL[0] + a2 * dL[1])
        for i, j in ((0, 1), (1, 0)):
            res += (z[i] * r[i] * dL[i]
                    + z[i] * be[i] * (lam[i, i] * d2[i][i] + lam[i, j] * d2[i][j]))
        worst = max(worst, abs(res))
    return worst


def laplace_boundary_values(mass, pi):
    """Ansatz values at z = 0: (L(0), dL/dz1(0), dL/dz2(0))."""
    return mass, -mass * float(pi[0]), -mass * float(pi[1])
