"""Operator-split finite-difference solver for the accelerated-regime limit.

The limit density obeys a reaction-diffusion-transport equation: pointwise
reaction B - D - alpha U*w, trait diffusion with the coefficient p sigma^2
Gamma inside the Laplacian (Laplacian of the product, as the limit equation
is written), cell diffusion gamma Delta_y, and the cell-transport divergence
term.  Splitting per step: explicit conservative upwind for the transport,
implicit backward-Euler flux-form solves for both diffusions (no-flux walls,
so they conserve mass to solver roundoff), exact exponential for the
reaction.  The advective step size is CFL-checked up front.
"""

import numpy as np
from scipy.linalg import solve_banded

from . import forms
from .errors import CFLViolation, NegativeDensity
from .params import (FALPHA, FB, FD, FGAMMA, FGAMMAC, FMUTSTD, FP)
from .transport import DensityGrid, TransportResult, _cell_field, _u_matrix


def _banded_product_laplacian(A, r):
    """Banded (1,1) matrix of I - r * L_neumann(diag(A) .), A per row."""
    n = len(A)
    ab = np.zeros((3, n))
    ab[1, :] = 1.0 + 2.0 * r * A
    ab[1, 0] = 1.0 + r * A[0]
    ab[1, -1] = 1.0 + r * A[-1]
    ab[0, 1:] = -r * A[1:]      # upper diagonal: coefficient of w_{i+1} in row i
    ab[2, :-1] = -r * A[:-1]    # lower diagonal: coefficient of w_{i-1}
    return ab


def _advect_axis(w, c_face, dy, dt, axis):
    """Conservative first-order upwind along one y axis; no-flux walls."""
    w = np.moveaxis(w, axis, 0)
    cf = np.moveaxis(c_face, axis, 0)      # (n+1, ...) face velocities
    up = np.where(cf[1:-1] > 0, w[:-1], w[1:])
    F = np.zeros_like(cf)
    F[1:-1] = cf[1:-1] * up
    out = w - dt / dy * (F[1:] - F[:-1])
    return np.moveaxis(out, 0, axis)


def reaction_diffusion_solve(w0, eff, T, dt, out_every=10, cfl_safety=0.95,
                             neg_tol=1e-12):
    """March the reaction-diffusion limit equation on a DensityGrid.

    eff is the RAW pack of limit coefficients; the H3 acceleration functions
    enter through their Gamma / gamma / sigma rows (use a params bundle whose
    Gamma, gamma, sigma are set; zeros degenerate to the pure transport
    equation, which is the cross-check configuration).
    """
    x, y1, y2 = w0.x, w0.y1, w0.y2
    nx, ny1, ny2 = len(x), len(y1), len(y2)
    dy1, dy2 = w0.dy1, w0.dy2

    Y1m, Y2m = np.meshgrid(y1, y2, indexing="ij")
    c1 = np.zeros((nx, ny1, ny2))
    c2 = np.zeros((nx, ny1, ny2))
    for ix in range(nx):
        a, b, _ = _cell_field(eff, x[ix], Y1m, Y2m)
        c1[ix] = a
        c2[ix] = b
    cmax1 = float(np.abs(c1).max())
    cmax2 = float(np.abs(c2).max())
    limit = cfl_safety * min(dy1 / cmax1 if cmax1 > 0 else np.inf,
                             dy2 / cmax2 if cmax2 > 0 else np.inf)
    if dt > limit:
        raise CFLViolation(f"dt={dt} exceeds advective CFL limit {limit:.3g}")

    # face velocities (averages of adjacent centers; outer walls closed)
    c1f = np.zeros((nx, ny1 + 1, ny2))
    c1f[:, 1:-1, :] = 0.5 * (c1[:, :-1, :] + c1[:, 1:, :])
    c2f = np.zeros((nx, ny1, ny2 + 1))
    c2f[:, :, 1:-1] = 0.5 * (c2[:, :, :-1] + c2[:, :, 1:])

    gam_c = np.array([eff.ftrait(FGAMMAC, xv) for xv in x])     # cell diffusion
    pv = np.array([eff.ftrait(FP, xv) for xv in x])
    sig = np.array([eff.ftrait(FMUTSTD, xv) for xv in x])       # sigma row
    Acoef = np.zeros((nx, ny1, ny2))                            # p sigma^2 Gamma
    for ix in range(nx):
        Acoef[ix] = pv[ix] * sig[ix] ** 2 * forms.np_eval_xy(eff.funcs[FGAMMA],
                                                             x[ix], Y1m, Y2m)
    a_is_x_only = all(np.allclose(Acoef[ix], Acoef[ix].flat[0]) for ix in range(nx))
    Bv = np.stack([forms.np_eval_xy(eff.funcs[FB], xv, Y1m, Y2m) for xv in x])
    Dv = np.stack([forms.np_eval_xy(eff.funcs[FD], xv, Y1m, Y2m) for xv in x])
    Av = np.stack([forms.np_eval_xy(eff.funcs[FALPHA], xv, Y1m, Y2m) for xv in x])
    Um = _u_matrix(eff, x) * eff.u_scale * w0.dx
    vol_y = dy1 * dy2
    dx = w0.dx

    # cached banded matrices for the y-diffusion solves (per trait slice)
    ab_y1 = [None] * nx
    ab_y2 = [None] * nx
    for ix in range(nx):
        if gam_c[ix] > 0:
            ab_y1[ix] = _banded_product_laplacian(np.full(ny1, 1.0), dt * gam_c[ix] / dy1 ** 2)
            ab_y2[ix] = _banded_product_laplacian(np.full(ny2, 1.0), dt * gam_c[ix] / dy2 ** 2)

    w = w0.vals.copy()
    nstep = int(round(T / dt))
    snaps = [w0.copy(time=0.0)]
    times = [0.0]
    masses = [w0.mass]
    for m in range(nstep):
        # 1. cell transport (explicit upwind, both axes)
        if cmax1 > 0:
            w = _advect_axis(w, c1f, dy1, dt, axis=1)
        if cmax2 > 0:
            w = _advect_axis(w, c2f, dy2, dt, axis=2)
        # 2. cell diffusion (implicit, per trait slice)
        for ix in range(nx):
            if ab_y1[ix] is None:
                continue
            w[ix] = solve_banded((1, 1), ab_y1[ix], w[ix].reshape(ny1, -1)).reshape(ny1, ny2)
            w[ix] = solve_banded((1, 1), ab_y2[ix],
                                 w[ix].transpose(1, 0).reshape(ny2, -1)).reshape(ny2, ny1).transpose(1, 0)
        # 3. trait diffusion of the product A w (implicit)
        if nx > 1 and Acoef.max() > 0:
            r = dt / dx ** 2
            if a_is_x_only:
                ab = _banded_product_laplacian(Acoef[:, 0, 0], r)
                w = solve_banded((1, 1), ab, w.reshape(nx, -1)).reshape(nx, ny1, ny2)
            else:
                for j1 in range(ny1):
                    for j2 in range(ny2):
                        ab = _banded_product_laplacian(Acoef[:, j1, j2], r)
                        w[:, j1, j2] = solve_banded((1, 1), ab, w[:, j1, j2])
        # 4. reaction (exact exponential of the frozen rate)
        marg = w.sum(axis=(1, 2)) * vol_y
        comp = Um @ marg
        w = w * np.exp(dt * (Bv - Dv - Av * comp[:, None, None]))
        wmin = float(w.min())
        if wmin < 0:
            scale = max(float(w.max()), 1.0)
            if wmin < -neg_tol * scale:
                raise NegativeDensity(f"density dipped to {wmin} at step {m}")
            w = np.maximum(w, 0.0)
        if (m + 1) % out_every == 0 or m == nstep - 1:
            t1 = (m + 1) * dt
            snaps.append(DensityGrid(x, y1, y2, w.copy(), time=t1))
            times.append(t1)
            masses.append(float(w.sum()) * w0.vol)
    return TransportResult(snaps, np.array(times), np.array(masses))
