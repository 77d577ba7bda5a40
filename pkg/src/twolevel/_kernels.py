"""Compiled event engine.

One replicate is a single-threaded Gillespie loop over the seven channels.
Per-individual selectable rates live in a flat array with either a linear
prefix-sum scan or a complete binary sum tree on top (config threshold picks
the structure).  With a constant competition kernel the death-by-competition
part is kept out of the per-individual base rate: it is alpha_i * uU0 * I,
so a second tree over alpha_i plus the current population size covers it
with O(log I) work per event; individual births and deaths then never touch
other individuals' cached rates.  With a non-constant kernel the kernel sums
S_i are cached per individual and every individual-level event refreshes all
of them (O(I) work; such configs stay at small population sizes).

Test-function accumulators are event-exact: between events every integrand
is constant, so drift and model-QV integrals are advanced in closed form at
each breakpoint, and the empirical QV adds the exact squared pairing jump at
each event.  Incremental running sums are refreshed from scratch every
audit_every events and the worst relative drift of the total rate is
reported back.
"""

import math

import numpy as np
from numba import njit, prange

from .forms import eval_g, eval_kernel, eval_xy, f_trunc_expect, nb_phi
from .params import (FALPHA, FB, FB1, FB2, FBETA1, FBETA2, FD, FD1, FD2,
                     FGAMMA, FGAMMAC, FMUTSTD, FP, FU)
from .rng import exponential, next_u64, normal, seed_state, uniform

# meta vector layout
(M_FINAL_T, M_EVENTS, M_EXTINCT_T, M_BUDGET, M_STALL, M_AUDIT, M_SUP_MASS,
 M_SUP_N2, M_CAPACITY, M_LOG_LEN, M_FROZEN, M_NEGRATE) = range(12)
META_LEN = 12
NOBS = 8            # I, mass, y1, y2, y1sq, y2sq, y1y2, n2raw
NTFCOL = 5          # pairing, drift integral, empirical qv, model qv, limit qv

KIND_CLONAL, KIND_MUTANT, KIND_DEATH = 0, 1, 2
KIND_C1B, KIND_C2B, KIND_C1D, KIND_C2D = 3, 4, 5, 6


@njit(cache=True, inline="always")
def _fxy(funcs, row, x0, y1, y2):
    return eval_xy(np.int64(funcs[row, 0]), funcs[row, 1], funcs[row, 2],
                   funcs[row, 3], x0, y1, y2)


@njit(cache=True, inline="always")
def _chan(funcs, x0, n1, n2, a1, a2, accel, cacc1, cacc2, l11, l12, l21, l22):
    """Per-individual channel rates, death split into (dfn, alpha)."""
    y1 = n1 * a1
    y2 = n2 * a2
    gam = 0.0
    if accel > 0.0:
        gam = _fxy(funcs, FGAMMA, x0, y1, y2)
    btot = accel * gam + _fxy(funcs, FB, x0, y1, y2)
    pm = _fxy(funcs, FP, x0, 0.0, 0.0)
    dfn = accel * gam + _fxy(funcs, FD, x0, y1, y2)
    al = _fxy(funcs, FALPHA, x0, y1, y2)
    gc = _fxy(funcs, FGAMMAC, x0, 0.0, 0.0)
    c1 = btot * (1.0 - pm)
    c2 = btot * pm
    c4 = (cacc1 * gc + _fxy(funcs, FB1, x0, 0.0, 0.0)) * n1
    c5 = (cacc2 * gc + _fxy(funcs, FB2, x0, 0.0, 0.0)) * n2
    c6 = (cacc1 * gc + _fxy(funcs, FD1, x0, 0.0, 0.0)
          + _fxy(funcs, FBETA1, x0, 0.0, 0.0) * (l11 * n1 + l12 * n2)) * n1
    c7 = (cacc2 * gc + _fxy(funcs, FD2, x0, 0.0, 0.0)
          + _fxy(funcs, FBETA2, x0, 0.0, 0.0) * (l21 * n1 + l22 * n2)) * n2
    return c1, c2, dfn, c4, c5, c6, c7, al


@njit(cache=True)
def _tf_six(funcs, tf, j, x0, n1, n2, a1, a2, accel, cacc1, cacc2,
            l11, l12, l21, l22, mut_scale, smax, blo0, bhi0, comp_in_base, comp):
    """(phi, drift_base, qv_base, limit_qv, fgg, fgg2) of one individual for tf j.

    drift_base/qv_base carry every channel except the competition part of the
    death rate when comp_in_base is False; the caller folds that part in as
    I * uU0 * (alpha fgg sums).  comp is the already-scaled field, used only
    when comp_in_base is True.
    """
    y1 = n1 * a1
    y2 = n2 * a2
    c1, c2, dfn, c4, c5, c6, c7, al = _chan(funcs, x0, n1, n2, a1, a2,
                                            accel, cacc1, cacc2, l11, l12, l21, l22)
    ff = np.int64(tf[j, 0, 0])
    fv = eval_xy(ff, tf[j, 0, 1], tf[j, 0, 2], tf[j, 0, 3], x0, 0.0, 0.0)
    g1f = np.int64(tf[j, 1, 0])
    g2f = np.int64(tf[j, 2, 0])
    g1 = eval_g(g1f, tf[j, 1, 1], y1)
    g2 = eval_g(g2f, tf[j, 2, 1], y2)
    g1p = eval_g(g1f, tf[j, 1, 1], y1 + a1) - g1
    g1m = eval_g(g1f, tf[j, 1, 1], y1 - a1) - g1
    g2p = eval_g(g2f, tf[j, 2, 1], y2 + a2) - g2
    g2m = eval_g(g2f, tf[j, 2, 1], y2 - a2) - g2
    fgg = fv * g1 * g2
    fgg2 = fgg * fgg
    ef1 = fv
    ef2 = fv * fv
    if c2 > 0.0:
        s = mut_scale * _fxy(funcs, FMUTSTD, x0, 0.0, 0.0)
        ef1 = f_trunc_expect(ff, tf[j, 0, 1], tf[j, 0, 2], tf[j, 0, 3],
                             x0, s, blo0, bhi0, 1)
        ef2 = f_trunc_expect(ff, tf[j, 0, 1], tf[j, 0, 2], tf[j, 0, 3],
                             x0, s, blo0, bhi0, 2)
    death = dfn
    if comp_in_base:
        death = dfn + al * comp
    drift = (c1 * fgg + c2 * ef1 * g1 * g2 - death * fgg
             + c4 * fv * g1p * g2 + c5 * fv * g1 * g2p
             + c6 * fv * g1m * g2 + c7 * fv * g1 * g2m)
    qv = (c1 * fgg2 + c2 * ef2 * g1 * g1 * g2 * g2 + death * fgg2
          + c4 * (fv * g1p * g2) ** 2 + c5 * (fv * g1 * g2p) ** 2
          + c6 * (fv * g1m * g2) ** 2 + c7 * (fv * g1 * g2m) ** 2)
    lq = 0.0
    if accel > 0.0:
        lq = 2.0 * _fxy(funcs, FGAMMA, x0, y1, y2) * fgg2
    return fgg, drift, qv, lq, fgg, fgg2


@njit(cache=True, inline="always")
def _tree_update(tree, capt, i, val):
    k = capt + i
    d = val - tree[k]
    while k >= 1:
        tree[k] += d
        k >>= 1


@njit(cache=True, inline="always")
def _tree_select(tree, capt, u):
    k = 1
    while k < capt:
        k <<= 1
        left = tree[k]
        if u >= left:
            u -= left
            k += 1
    return k - capt, u


@njit(cache=True)
def _tree_rebuild(tree, capt):
    for k in range(capt - 1, 0, -1):
        tree[k] = tree[2 * k] + tree[2 * k + 1]


@njit(cache=True)
def _run_one(
        # model pack
        funcs, blo, bhi, w, a1, a2, accel, cacc1, cacc2, u_scale,
        l11, l12, l21, l22, mut_scale, cbar, smax, const_u, u0,
        # run setup
        init_x, init_n1, init_n2, T, obs, tf, track_tf,
        seed, stream, event_budget, audit_every, use_tree, cap,
        # outputs
        obs_out, tf_out, meta, log_t, log_kind, log_actor, log_iafter, log_cap):
    d = init_x.shape[1]
    ntf = tf.shape[0]
    capt = 1
    while capt < cap:
        capt <<= 1
    x = np.zeros((cap, d))
    n1 = np.zeros(cap, dtype=np.int64)
    n2 = np.zeros(cap, dtype=np.int64)
    base = np.zeros(cap)
    alv = np.zeros(cap)
    S = np.zeros(cap)  # raw kernel sums (general-kernel path)
    treeA = np.zeros(2 * capt)
    treeB = np.zeros(2 * capt)
    state = np.zeros(4, dtype=np.uint64)
    seed_state(state, seed, stream)

    I = init_x.shape[0]
    for i in range(I):
        for k in range(d):
            x[i, k] = init_x[i, k]
        n1[i] = init_n1[i]
        n2[i] = init_n2[i]

    # incremental aggregates
    sy1 = 0.0
    sy2 = 0.0
    sy1sq = 0.0
    sy2sq = 0.0
    sy1y2 = 0.0
    sn2raw = 0.0
    P = np.zeros(ntf)       # unweighted pairing sums
    sdb = np.zeros(ntf)     # drift base
    sdc = np.zeros(ntf)     # sum alpha_i fgg_i
    sqb = np.zeros(ntf)     # qv base
    sqc = np.zeros(ntf)     # sum alpha_i fgg_i^2
    slq = np.zeros(ntf)     # sum 2 Gamma_i fgg_i^2
    acc_drift = np.zeros(ntf)
    acc_mqv = np.zeros(ntf)
    acc_lqv = np.zeros(ntf)
    acc_eqv = np.zeros(ntf)
    totA = 0.0
    totB = 0.0
    dxv = np.zeros(d)

    def_comp_in_base = not const_u

    # ---- from-scratch build of every cache (repeated at audit time) --------
    if not const_u:
        for i in range(I):
            s = 0.0
            for jj in range(I):
                for k in range(d):
                    dxv[k] = x[i, k] - x[jj, k]
                s += eval_kernel(np.int64(funcs[FU, 0]), funcs[FU, 1],
                                 funcs[FU, 2], funcs[FU, 3], dxv)
            S[i] = s
    totA = 0.0
    totB = 0.0
    sy1 = sy2 = sy1sq = sy2sq = sy1y2 = sn2raw = 0.0
    for j in range(ntf):
        P[j] = sdb[j] = sdc[j] = sqb[j] = sqc[j] = slq[j] = 0.0
    for i in range(I):
        c1, c2, dfn, c4, c5, c6, c7, al = _chan(funcs, x[i, 0], n1[i], n2[i],
                                                a1, a2, accel, cacc1, cacc2,
                                                l11, l12, l21, l22)
        if const_u:
            b = c1 + c2 + dfn + c4 + c5 + c6 + c7
            alv[i] = al
            totB += al
        else:
            b = c1 + c2 + dfn + al * u_scale * S[i] + c4 + c5 + c6 + c7
        base[i] = b
        totA += b
        if use_tree:
            treeA[capt + i] = b
            if const_u:
                treeB[capt + i] = alv[i]
        y1 = n1[i] * a1
        y2 = n2[i] * a2
        sy1 += y1
        sy2 += y2
        sy1sq += y1 * y1
        sy2sq += y2 * y2
        sy1y2 += y1 * y2
        sn2raw += float(n1[i] + n2[i]) ** 2
        if track_tf:
            comp = u_scale * (u0 * I if const_u else S[i])
            for j in range(ntf):
                fgg, dr, qv, lq, _, fgg2 = _tf_six(funcs, tf, j, x[i, 0], n1[i], n2[i],
                                                   a1, a2, accel, cacc1, cacc2,
                                                   l11, l12, l21, l22, mut_scale, smax,
                                                   blo[0], bhi[0], def_comp_in_base, comp)
                P[j] += fgg
                sdb[j] += dr
                sdc[j] += alv[i] * fgg if const_u else 0.0
                sqb[j] += qv
                sqc[j] += alv[i] * fgg2 if const_u else 0.0
                slq[j] += lq
    if use_tree:
        _tree_rebuild(treeA, capt)
        if const_u:
            _tree_rebuild(treeB, capt)

    t = 0.0
    tacc = 0.0
    ig = 0
    ngrid = obs.shape[0]
    nevents = 0
    next_audit = audit_every
    log_len = 0
    meta[M_EXTINCT_T] = -1.0
    meta[M_SUP_MASS] = w * I
    meta[M_SUP_N2] = sn2raw
    comp_coef = u_scale * u0 if const_u else 0.0

    while True:
        if use_tree:
            tA = treeA[1]
            tB = treeB[1]
        else:
            tA = totA
            tB = totB
        tot = tA + (comp_coef * I * tB if const_u else 0.0)
        if not (tot > 1e-300):
            # frozen or extinct: integrands are all zero from here on
            while ig < ngrid and obs[ig] <= T:
                obs_out[ig, 0] = I
                obs_out[ig, 1] = w * I
                obs_out[ig, 2] = w * sy1
                obs_out[ig, 3] = w * sy2
                obs_out[ig, 4] = w * sy1sq
                obs_out[ig, 5] = w * sy2sq
                obs_out[ig, 6] = w * sy1y2
                obs_out[ig, 7] = sn2raw
                for j in range(ntf):
                    tf_out[ig, j, 0] = w * P[j]
                    tf_out[ig, j, 1] = acc_drift[j]
                    tf_out[ig, j, 2] = acc_eqv[j]
                    tf_out[ig, j, 3] = acc_mqv[j]
                    tf_out[ig, j, 4] = acc_lqv[j]
                ig += 1
            if I > 0:
                meta[M_FROZEN] = 1.0
            meta[M_FINAL_T] = T
            break
        dt = exponential(state) / tot
        tev = t + dt
        b = tev
        if b > T:
            b = T
        # flush grid points strictly before the next breakpoint
        while ig < ngrid and obs[ig] < b:
            dtg = obs[ig] - tacc
            for j in range(ntf):
                acc_drift[j] += dtg * w * (sdb[j] - comp_coef * I * sdc[j])
                acc_mqv[j] += dtg * w * w * (sqb[j] + comp_coef * I * sqc[j])
                acc_lqv[j] += dtg * w * slq[j]
            tacc = obs[ig]
            obs_out[ig, 0] = I
            obs_out[ig, 1] = w * I
            obs_out[ig, 2] = w * sy1
            obs_out[ig, 3] = w * sy2
            obs_out[ig, 4] = w * sy1sq
            obs_out[ig, 5] = w * sy2sq
            obs_out[ig, 6] = w * sy1y2
            obs_out[ig, 7] = sn2raw
            for j in range(ntf):
                tf_out[ig, j, 0] = w * P[j]
                tf_out[ig, j, 1] = acc_drift[j]
                tf_out[ig, j, 2] = acc_eqv[j]
                tf_out[ig, j, 3] = acc_mqv[j]
                tf_out[ig, j, 4] = acc_lqv[j]
            ig += 1
        if tev >= T:
            dtg = T - tacc
            for j in range(ntf):
                acc_drift[j] += dtg * w * (sdb[j] - comp_coef * I * sdc[j])
                acc_mqv[j] += dtg * w * w * (sqb[j] + comp_coef * I * sqc[j])
                acc_lqv[j] += dtg * w * slq[j]
            tacc = T
            while ig < ngrid and obs[ig] <= T:
                obs_out[ig, 0] = I
                obs_out[ig, 1] = w * I
                obs_out[ig, 2] = w * sy1
                obs_out[ig, 3] = w * sy2
                obs_out[ig, 4] = w * sy1sq
                obs_out[ig, 5] = w * sy2sq
                obs_out[ig, 6] = w * sy1y2
                obs_out[ig, 7] = sn2raw
                for j in range(ntf):
                    tf_out[ig, j, 0] = w * P[j]
                    tf_out[ig, j, 1] = acc_drift[j]
                    tf_out[ig, j, 2] = acc_eqv[j]
                    tf_out[ig, j, 3] = acc_mqv[j]
                    tf_out[ig, j, 4] = acc_lqv[j]
                ig += 1
            meta[M_FINAL_T] = T
            break
        # advance integrals to the event time
        dtg = tev - tacc
        for j in range(ntf):
            acc_drift[j] += dtg * w * (sdb[j] - comp_coef * I * sdc[j])
            acc_mqv[j] += dtg * w * w * (sqb[j] + comp_coef * I * sqc[j])
            acc_lqv[j] += dtg * w * slq[j]
        tacc = tev
        if nevents >= event_budget:
            meta[M_BUDGET] = 1.0
            meta[M_FINAL_T] = tev
            break

        # ---- select (individual, channel) ----------------------------------
        u = uniform(state) * tot
        kind = -1
        idx = -1
        if const_u and u >= tA:
            # competition death, individual proportional to alpha
            v = (u - tA) / (comp_coef * I)
            if use_tree:
                idx, _ = _tree_select(treeB, capt, v)
            else:
                cum = 0.0
                idx = I - 1
                for i in range(I):
                    cum += alv[i]
                    if v < cum:
                        idx = i
                        break
            if idx >= I:
                idx = I - 1  # roundoff guard at the padded tail
            kind = KIND_DEATH
        else:
            if use_tree:
                idx, rem = _tree_select(treeA, capt, u)
            else:
                cum = 0.0
                idx = I - 1
                rem = u
                for i in range(I):
                    if u < cum + base[i]:
                        idx = i
                        rem = u - cum
                        break
                    cum += base[i]
            if idx >= I:
                idx = I - 1  # roundoff guard at the padded tail
                rem = 0.0
            c1, c2, dfn, c4, c5, c6, c7, al = _chan(funcs, x[idx, 0], n1[idx], n2[idx],
                                                    a1, a2, accel, cacc1, cacc2,
                                                    l11, l12, l21, l22)
            death = dfn if const_u else dfn + al * u_scale * S[idx]
            # internal tree nodes drift by increments; the leaf itself is exact
            # and recomputed bit-identically here, so clamping rem below the
            # fresh channel total keeps the prefix scan inside real channels
            tot7 = c1 + c2 + death + c4 + c5 + c6 + c7
            if rem >= tot7:
                rem = tot7 * 0.9999999999999999
            if rem < c1:
                kind = KIND_CLONAL
            elif rem < c1 + c2:
                kind = KIND_MUTANT
            elif rem < c1 + c2 + death:
                kind = KIND_DEATH
            elif rem < c1 + c2 + death + c4:
                kind = KIND_C1B
            elif rem < c1 + c2 + death + c4 + c5:
                kind = KIND_C2B
            elif rem < c1 + c2 + death + c4 + c5 + c6:
                kind = KIND_C1D
            else:
                kind = KIND_C2D

        # ---- apply ----------------------------------------------------------
        if kind == KIND_CLONAL or kind == KIND_MUTANT:
            if I >= cap:
                meta[M_CAPACITY] = 1.0
                meta[M_FINAL_T] = tev
                break
            k = I
            newx0 = x[idx, 0]
            if kind == KIND_MUTANT:
                # rejection sampling against Cbar * Mbar
                s = mut_scale * _fxy(funcs, FMUTSTD, x[idx, 0], 0.0, 0.0)
                senv = mut_scale * smax
                mass = 1.0
                for kk in range(d):
                    mass *= (nb_phi((bhi[kk] - x[idx, kk]) / s)
                             - nb_phi((blo[kk] - x[idx, kk]) / s))
                ok = False
                for _att in range(1_000_000):
                    q = 0.0
                    inside = True
                    for kk in range(d):
                        z = normal(state) * senv
                        dxv[kk] = z
                        q += z * z
                        c = x[idx, kk] + z
                        if c < blo[kk] or c > bhi[kk]:
                            inside = False
                    if not inside:
                        continue
                    ratio = (senv / s) ** d * math.exp(-q / (2.0 * s * s)
                                                       + q / (2.0 * senv * senv))
                    if uniform(state) <= ratio / (mass * cbar):
                        ok = True
                        break
                if not ok:
                    meta[M_STALL] = 1.0
                    meta[M_FINAL_T] = tev
                    break
                for kk in range(d):
                    x[k, kk] = x[idx, kk] + dxv[kk]
                newx0 = x[k, 0]
            else:
                for kk in range(d):
                    x[k, kk] = x[idx, kk]
            n1[k] = n1[idx]
            n2[k] = n2[idx]
            if not const_u:
                # kernel sums gain the newcomer for everybody, then S_k
                sk = 0.0
                for jj in range(I + 1):
                    for kk in range(d):
                        dxv[kk] = x[jj, kk] - x[k, kk]
                    uv = eval_kernel(np.int64(funcs[FU, 0]), funcs[FU, 1],
                                     funcs[FU, 2], funcs[FU, 3], dxv)
                    if jj <= I - 1:
                        S[jj] += uv
                    for kk in range(d):
                        dxv[kk] = -dxv[kk]
                    sk += eval_kernel(np.int64(funcs[FU, 0]), funcs[FU, 1],
                                      funcs[FU, 2], funcs[FU, 3], dxv)
                S[k] = sk
            I += 1
            y1 = n1[k] * a1
            y2 = n2[k] * a2
            sy1 += y1
            sy2 += y2
            sy1sq += y1 * y1
            sy2sq += y2 * y2
            sy1y2 += y1 * y2
            sn2raw += float(n1[k] + n2[k]) ** 2
            if const_u:
                c1, c2, dfn, c4, c5, c6, c7, al = _chan(funcs, newx0, n1[k], n2[k],
                                                        a1, a2, accel, cacc1, cacc2,
                                                        l11, l12, l21, l22)
                bnew = c1 + c2 + dfn + c4 + c5 + c6 + c7
                base[k] = bnew
                alv[k] = al
                if use_tree:
                    _tree_update(treeA, capt, k, bnew)
                    _tree_update(treeB, capt, k, al)
                else:
                    totA += bnew
                    totB += al
                if track_tf:
                    comp = u_scale * u0 * I
                    for j in range(ntf):
                        fgg, dr, qv, lq, _, fgg2 = _tf_six(funcs, tf, j, newx0, n1[k], n2[k],
                                                           a1, a2, accel, cacc1, cacc2,
                                                           l11, l12, l21, l22, mut_scale,
                                                           smax, blo[0], bhi[0], False, comp)
                        acc_eqv[j] += (w * fgg) ** 2
                        P[j] += fgg
                        sdb[j] += dr
                        sdc[j] += al * fgg
                        sqb[j] += qv
                        sqc[j] += al * fgg2
                        slq[j] += lq
            else:
                # competition moved for everyone: rebuild bases and tf sums
                totA = 0.0
                for j in range(ntf):
                    if track_tf:
                        # capture jump of pairing before the refresh
                        fgg, _, _, _, _, _ = _tf_six(funcs, tf, j, newx0, n1[k], n2[k],
                                                     a1, a2, accel, cacc1, cacc2,
                                                     l11, l12, l21, l22, mut_scale,
                                                     smax, blo[0], bhi[0], True,
                                                     u_scale * S[k])
                        acc_eqv[j] += (w * fgg) ** 2
                    P[j] = sdb[j] = sqb[j] = slq[j] = 0.0
                for i in range(I):
                    c1, c2, dfn, c4, c5, c6, c7, al = _chan(funcs, x[i, 0], n1[i], n2[i],
                                                            a1, a2, accel, cacc1, cacc2,
                                                            l11, l12, l21, l22)
                    bnew = c1 + c2 + dfn + al * u_scale * S[i] + c4 + c5 + c6 + c7
                    base[i] = bnew
                    totA += bnew
                    if use_tree:
                        treeA[capt + i] = bnew
                    if track_tf:
                        for j in range(ntf):
                            fgg, dr, qv, lq, _, _ = _tf_six(funcs, tf, j, x[i, 0], n1[i], n2[i],
                                                            a1, a2, accel, cacc1, cacc2,
                                                            l11, l12, l21, l22, mut_scale,
                                                            smax, blo[0], bhi[0], True,
                                                            u_scale * S[i])
                            P[j] += fgg
                            sdb[j] += dr
                            sqb[j] += qv
                            slq[j] += lq
                if use_tree:
                    _tree_rebuild(treeA, capt)
        elif kind == KIND_DEATH:
            y1 = n1[idx] * a1
            y2 = n2[idx] * a2
            sy1 -= y1
            sy2 -= y2
            sy1sq -= y1 * y1
            sy2sq -= y2 * y2
            sy1y2 -= y1 * y2
            sn2raw -= float(n1[idx] + n2[idx]) ** 2
            if const_u:
                if track_tf:
                    comp = u_scale * u0 * I
                    for j in range(ntf):
                        fgg, dr, qv, lq, _, fgg2 = _tf_six(funcs, tf, j, x[idx, 0],
                                                           n1[idx], n2[idx],
                                                           a1, a2, accel, cacc1, cacc2,
                                                           l11, l12, l21, l22, mut_scale,
                                                           smax, blo[0], bhi[0], False, comp)
                        acc_eqv[j] += (w * fgg) ** 2
                        P[j] -= fgg
                        sdb[j] -= dr
                        sdc[j] -= alv[idx] * fgg
                        sqb[j] -= qv
                        sqc[j] -= alv[idx] * fgg2
                        slq[j] -= lq
                last = I - 1
                if idx != last:
                    for kk in range(d):
                        x[idx, kk] = x[last, kk]
                    n1[idx] = n1[last]
                    n2[idx] = n2[last]
                    base[idx] = base[last]
                    alv[idx] = alv[last]
                    if use_tree:
                        _tree_update(treeA, capt, idx, base[last])
                        _tree_update(treeB, capt, idx, alv[last])
                if use_tree:
                    _tree_update(treeA, capt, last, 0.0)
                    _tree_update(treeB, capt, last, 0.0)
                I -= 1
                if not use_tree:
                    totA = 0.0
                    totB = 0.0
                    for i in range(I):
                        totA += base[i]
                        totB += alv[i]
            else:
                if track_tf:
                    for j in range(ntf):
                        fgg, _, _, _, _, _ = _tf_six(funcs, tf, j, x[idx, 0],
                                                     n1[idx], n2[idx],
                                                     a1, a2, accel, cacc1, cacc2,
                                                     l11, l12, l21, l22, mut_scale,
                                                     smax, blo[0], bhi[0], True,
                                                     u_scale * S[idx])
                        acc_eqv[j] += (w * fgg) ** 2
                # kernel sums lose the departed for everybody
                for jj in range(I):
                    if jj == idx:
                        continue
                    for kk in range(d):
                        dxv[kk] = x[jj, kk] - x[idx, kk]
                    S[jj] -= eval_kernel(np.int64(funcs[FU, 0]), funcs[FU, 1],
                                         funcs[FU, 2], funcs[FU, 3], dxv)
                last = I - 1
                if idx != last:
                    for kk in range(d):
                        x[idx, kk] = x[last, kk]
                    n1[idx] = n1[last]
                    n2[idx] = n2[last]
                    S[idx] = S[last]
                I -= 1
                totA = 0.0
                for j in range(ntf):
                    P[j] = sdb[j] = sqb[j] = slq[j] = 0.0
                for i in range(I):
                    c1, c2, dfn, c4, c5, c6, c7, al = _chan(funcs, x[i, 0], n1[i], n2[i],
                                                            a1, a2, accel, cacc1, cacc2,
                                                            l11, l12, l21, l22)
                    bnew = c1 + c2 + dfn + al * u_scale * S[i] + c4 + c5 + c6 + c7
                    base[i] = bnew
                    totA += bnew
                    if use_tree:
                        treeA[capt + i] = bnew
                    if track_tf:
                        for j in range(ntf):
                            fgg, dr, qv, lq, _, _ = _tf_six(funcs, tf, j, x[i, 0], n1[i], n2[i],
                                                            a1, a2, accel, cacc1, cacc2,
                                                            l11, l12, l21, l22, mut_scale,
                                                            smax, blo[0], bhi[0], True,
                                                            u_scale * S[i])
                            P[j] += fgg
                            sdb[j] += dr
                            sqb[j] += qv
                            slq[j] += lq
                if use_tree:
                    for i in range(I, cap):
                        treeA[capt + i] = 0.0
                    _tree_rebuild(treeA, capt)
            if I == 0:
                meta[M_EXTINCT_T] = tev
        else:
            # cell event on individual idx
            oldn1 = n1[idx]
            oldn2 = n2[idx]
            oy1 = oldn1 * a1
            oy2 = oldn2 * a2
            if track_tf:
                comp = u_scale * (u0 * I if const_u else S[idx])
                for j in range(ntf):
                    fgg, dr, qv, lq, _, fgg2 = _tf_six(funcs, tf, j, x[idx, 0],
                                                       oldn1, oldn2, a1, a2, accel,
                                                       cacc1, cacc2, l11, l12, l21, l22,
                                                       mut_scale, smax, blo[0], bhi[0],
                                                       def_comp_in_base, comp)
                    P[j] -= fgg
                    sdb[j] -= dr
                    sqb[j] -= qv
                    slq[j] -= lq
                    if const_u:
                        sdc[j] -= alv[idx] * fgg
                        sqc[j] -= alv[idx] * fgg2
            if kind == KIND_C1B:
                n1[idx] = oldn1 + 1
            elif kind == KIND_C2B:
                n2[idx] = oldn2 + 1
            elif kind == KIND_C1D:
                n1[idx] = oldn1 - 1
            else:
                n2[idx] = oldn2 - 1
            y1 = n1[idx] * a1
            y2 = n2[idx] * a2
            sy1 += y1 - oy1
            sy2 += y2 - oy2
            sy1sq += y1 * y1 - oy1 * oy1
            sy2sq += y2 * y2 - oy2 * oy2
            sy1y2 += y1 * y2 - oy1 * oy2
            sn2raw += float(n1[idx] + n2[idx]) ** 2 - float(oldn1 + oldn2) ** 2
            c1, c2, dfn, c4, c5, c6, c7, al = _chan(funcs, x[idx, 0], n1[idx], n2[idx],
                                                    a1, a2, accel, cacc1, cacc2,
                                                    l11, l12, l21, l22)
            if const_u:
                bnew = c1 + c2 + dfn + c4 + c5 + c6 + c7
            else:
                bnew = c1 + c2 + dfn + al * u_scale * S[idx] + c4 + c5 + c6 + c7
            if use_tree:
                _tree_update(treeA, capt, idx, bnew)
                if const_u:
                    _tree_update(treeB, capt, idx, al)
            else:
                totA += bnew - base[idx]
                if const_u:
                    totB += al - alv[idx]
            base[idx] = bnew
            if const_u:
                alv[idx] = al
            if track_tf:
                comp = u_scale * (u0 * I if const_u else S[idx])
                for j in range(ntf):
                    fgg, dr, qv, lq, _, fgg2 = _tf_six(funcs, tf, j, x[idx, 0],
                                                       n1[idx], n2[idx], a1, a2, accel,
                                                       cacc1, cacc2, l11, l12, l21, l22,
                                                       mut_scale, smax, blo[0], bhi[0],
                                                       def_comp_in_base, comp)
                    P[j] += fgg
                    sdb[j] += dr
                    sqb[j] += qv
                    slq[j] += lq
                    if const_u:
                        sdc[j] += alv[idx] * fgg
                        sqc[j] += alv[idx] * fgg2
                    # empirical qv: pairing jump from the cell move
                    # (recovered from the two incremental passes)
            if track_tf:
                for j in range(ntf):
                    g1f = np.int64(tf[j, 1, 0])
                    g2f = np.int64(tf[j, 2, 0])
                    ff = np.int64(tf[j, 0, 0])
                    fv = eval_xy(ff, tf[j, 0, 1], tf[j, 0, 2], tf[j, 0, 3],
                                 x[idx, 0], 0.0, 0.0)
                    dg = (fv * eval_g(g1f, tf[j, 1, 1], y1) * eval_g(g2f, tf[j, 2, 1], y2)
                          - fv * eval_g(g1f, tf[j, 1, 1], oy1) * eval_g(g2f, tf[j, 2, 1], oy2))
                    acc_eqv[j] += (w * dg) ** 2

        t = tev
        nevents += 1
        if w * I > meta[M_SUP_MASS]:
            meta[M_SUP_MASS] = w * I
        if sn2raw > meta[M_SUP_N2]:
            meta[M_SUP_N2] = sn2raw
        if log_cap > 0 and log_len < log_cap:
            log_t[log_len] = tev
            log_kind[log_len] = kind
            log_actor[log_len] = idx
            log_iafter[log_len] = I
            log_len += 1

        # ---- periodic audit: compare and refresh every incremental cache ----
        if nevents >= next_audit:
            next_audit += audit_every
            if use_tree:
                tA = treeA[1]
                tB = treeB[1]
            else:
                tA = totA
                tB = totB
            tot_inc = tA + (comp_coef * I * tB if const_u else 0.0)
            if not const_u:
                for i in range(I):
                    s = 0.0
                    for jj in range(I):
                        for kk in range(d):
                            dxv[kk] = x[i, kk] - x[jj, kk]
                        s += eval_kernel(np.int64(funcs[FU, 0]), funcs[FU, 1],
                                         funcs[FU, 2], funcs[FU, 3], dxv)
                    S[i] = s
            totA = 0.0
            totB = 0.0
            sy1 = sy2 = sy1sq = sy2sq = sy1y2 = sn2raw = 0.0
            for j in range(ntf):
                P[j] = sdb[j] = sdc[j] = sqb[j] = sqc[j] = slq[j] = 0.0
            for i in range(I):
                c1, c2, dfn, c4, c5, c6, c7, al = _chan(funcs, x[i, 0], n1[i], n2[i],
                                                        a1, a2, accel, cacc1, cacc2,
                                                        l11, l12, l21, l22)
                if const_u:
                    bnew = c1 + c2 + dfn + c4 + c5 + c6 + c7
                    alv[i] = al
                    totB += al
                else:
                    bnew = c1 + c2 + dfn + al * u_scale * S[i] + c4 + c5 + c6 + c7
                base[i] = bnew
                totA += bnew
                if use_tree:
                    treeA[capt + i] = bnew
                    if const_u:
                        treeB[capt + i] = al
                y1 = n1[i] * a1
                y2 = n2[i] * a2
                sy1 += y1
                sy2 += y2
                sy1sq += y1 * y1
                sy2sq += y2 * y2
                sy1y2 += y1 * y2
                sn2raw += float(n1[i] + n2[i]) ** 2
                if track_tf:
                    comp = u_scale * (u0 * I if const_u else S[i])
                    for j in range(ntf):
                        fgg, dr, qv, lq, _, fgg2 = _tf_six(funcs, tf, j, x[i, 0],
                                                           n1[i], n2[i], a1, a2, accel,
                                                           cacc1, cacc2, l11, l12, l21, l22,
                                                           mut_scale, smax, blo[0], bhi[0],
                                                           def_comp_in_base, comp)
                        P[j] += fgg
                        sdb[j] += dr
                        sqb[j] += qv
                        slq[j] += lq
                        if const_u:
                            sdc[j] += al * fgg
                            sqc[j] += al * fgg2
            if use_tree:
                for i in range(I, cap):
                    treeA[capt + i] = 0.0
                    if const_u:
                        treeB[capt + i] = 0.0
                _tree_rebuild(treeA, capt)
                if const_u:
                    _tree_rebuild(treeB, capt)
                tA = treeA[1]
                tB = treeB[1]
            else:
                tA = totA
                tB = totB
            tot_fresh = tA + (comp_coef * I * tB if const_u else 0.0)
            denom = tot_fresh if tot_fresh > 0 else 1.0
            rel = abs(tot_inc - tot_fresh) / denom
            if rel > meta[M_AUDIT]:
                meta[M_AUDIT] = rel

    meta[M_EVENTS] = nevents
    meta[M_LOG_LEN] = log_len
    return 0


@njit(cache=True, parallel=True)
def run_replicates(nrep, funcs, blo, bhi, w, a1, a2, accel, cacc1, cacc2,
                   u_scale, l11, l12, l21, l22, mut_scale, cbar, smax,
                   const_u, u0, init_x, init_n1, init_n2, T, obs, tf, track_tf,
                   seed, event_budget, audit_every, use_tree, cap,
                   obs_out, tf_out, meta, log_t, log_kind, log_actor,
                   log_iafter, log_cap):
    for r in prange(nrep):
        _run_one(funcs, blo, bhi, w, a1, a2, accel, cacc1, cacc2, u_scale,
                 l11, l12, l21, l22, mut_scale, cbar, smax, const_u, u0,
                 init_x, init_n1, init_n2, T, obs, tf, track_tf,
                 seed, r, event_budget, audit_every, use_tree, cap,
                 obs_out[r], tf_out[r], meta[r],
                 log_t[r], log_kind[r], log_actor[r], log_iafter[r], log_cap)
