"""Two-species competitive Lotka-Volterra flow and its equilibria.

The flow

    y1' = y1 (r1 - beta1 (l11 y1 + l12 y2))
    y2' = y2 (r2 - beta2 (l21 y1 + l22 y2))

is the characteristic field of the cell-transport term in the large
population limit.  It is integrated with an adaptive embedded Dormand-Prince
4(5) pair (defaults: absolute tolerance 1e-10, relative 1e-8).  Axes are
invariant exactly: a coordinate that starts at 0 contributes 0 to every
stage, so it stays at floating-point zero.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import StepFailure

DEFAULT_ATOL = 1e-10
DEFAULT_RTOL = 1e-8


@dataclass(frozen=True)
class LVParams:
    r1: float
    r2: float
    beta1: float
    beta2: float
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))

    def flat(self):
        l = self.lam
        return (self.r1, self.r2, self.beta1, self.beta2,
                l[0, 0], l[0, 1], l[1, 0], l[1, 1])


def lv_params_at(model, x0=0.0):
    """LVParams of a ModelParams bundle evaluated at one trait value."""
    return LVParams(
        r1=model.b1.trait(x0) - model.d1.trait(x0),
        r2=model.b2.trait(x0) - model.d2.trait(x0),
        beta1=model.beta1.trait(x0),
        beta2=model.beta2.trait(x0),
        lam=model.lam,
    )


@njit(cache=True, inline="always")
def lv_rhs(y1, y2, r1, r2, be1, be2, l11, l12, l21, l22):
    c1 = y1 * (r1 - be1 * (l11 * y1 + l12 * y2))
    c2 = y2 * (r2 - be2 * (l21 * y1 + l22 * y2))
    return c1, c2


@njit(cache=True)
def _dp45(y1, y2, s, t, r1, r2, be1, be2, l11, l12, l21, l22,
          atol, rtol, max_steps):
    """One trajectory of the LV flow from time s to t.  Returns (y1, y2, ok)."""
    if t <= s:
        return y1, y2, True
    h = min(t - s, 1e-2)
    k11, k12 = lv_rhs(y1, y2, r1, r2, be1, be2, l11, l12, l21, l22)
    fn = max(abs(k11), abs(k12))
    if fn > 0.0:
        h = min(h, 0.1 / fn)
    tt = s
    steps = 0
    while tt < t:
        if steps > max_steps:
            return y1, y2, False
        steps += 1
        if tt + h > t:
            h = t - tt
        # Dormand-Prince stages
        a1, a2 = lv_rhs(y1, y2, r1, r2, be1, be2, l11, l12, l21, l22)
        u1 = y1 + h * 0.2 * a1
        u2 = y2 + h * 0.2 * a2
        b1, b2 = lv_rhs(u1, u2, r1, r2, be1, be2, l11, l12, l21, l22)
        u1 = y1 + h * (3.0 / 40.0 * a1 + 9.0 / 40.0 * b1)
        u2 = y2 + h * (3.0 / 40.0 * a2 + 9.0 / 40.0 * b2)
        c1, c2 = lv_rhs(u1, u2, r1, r2, be1, be2, l11, l12, l21, l22)
        u1 = y1 + h * (44.0 / 45.0 * a1 - 56.0 / 15.0 * b1 + 32.0 / 9.0 * c1)
        u2 = y2 + h * (44.0 / 45.0 * a2 - 56.0 / 15.0 * b2 + 32.0 / 9.0 * c2)
        d1, d2 = lv_rhs(u1, u2, r1, r2, be1, be2, l11, l12, l21, l22)
        u1 = y1 + h * (19372.0 / 6561.0 * a1 - 25360.0 / 2187.0 * b1
                       + 64448.0 / 6561.0 * c1 - 212.0 / 729.0 * d1)
        u2 = y2 + h * (19372.0 / 6561.0 * a2 - 25360.0 / 2187.0 * b2
                       + 64448.0 / 6561.0 * c2 - 212.0 / 729.0 * d2)
        e1, e2 = lv_rhs(u1, u2, r1, r2, be1, be2, l11, l12, l21, l22)
        u1 = y1 + h * (9017.0 / 3168.0 * a1 - 355.0 / 33.0 * b1 + 46732.0 / 5247.0 * c1
                       + 49.0 / 176.0 * d1 - 5103.0 / 18656.0 * e1)
        u2 = y2 + h * (9017.0 / 3168.0 * a2 - 355.0 / 33.0 * b2 + 46732.0 / 5247.0 * c2
                       + 49.0 / 176.0 * d2 - 5103.0 / 18656.0 * e2)
        f1, f2 = lv_rhs(u1, u2, r1, r2, be1, be2, l11, l12, l21, l22)
        y1n = y1 + h * (35.0 / 384.0 * a1 + 500.0 / 1113.0 * c1 + 125.0 / 192.0 * d1
                        - 2187.0 / 6784.0 * e1 + 11.0 / 84.0 * f1)
        y2n = y2 + h * (35.0 / 384.0 * a2 + 500.0 / 1113.0 * c2 + 125.0 / 192.0 * d2
                        - 2187.0 / 6784.0 * e2 + 11.0 / 84.0 * f2)
        g1, g2 = lv_rhs(y1n, y2n, r1, r2, be1, be2, l11, l12, l21, l22)
        err1 = h * (71.0 / 57600.0 * a1 - 71.0 / 16695.0 * c1 + 71.0 / 1920.0 * d1
                    - 17253.0 / 339200.0 * e1 + 22.0 / 525.0 * f1 - 1.0 / 40.0 * g1)
        err2 = h * (71.0 / 57600.0 * a2 - 71.0 / 16695.0 * c2 + 71.0 / 1920.0 * d2
                    - 17253.0 / 339200.0 * e2 + 22.0 / 525.0 * f2 - 1.0 / 40.0 * g2)
        sc1 = atol + rtol * max(abs(y1), abs(y1n))
        sc2 = atol + rtol * max(abs(y2), abs(y2n))
        en = max(abs(err1) / sc1, abs(err2) / sc2)
        if en <= 1.0:
            tt += h
            y1, y2 = y1n, y2n
            if y1 < 0.0:
                y1 = 0.0
            if y2 < 0.0:
                y2 = 0.0
        if en == 0.0:
            fac = 5.0
        else:
            fac = min(5.0, max(0.2, 0.9 * en ** -0.2))
        h *= fac
        if h < 1e-14 * max(1.0, abs(t)):
            return y1, y2, False
    return y1, y2, True


def lv_flow(x, y, s, t, params, atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL, max_steps=10_000_000):
    """phi^{s,y}_x(t): the LV flow value at time t started from y at time s.

    params is either an LVParams (x ignored) or a ModelParams evaluated at
    trait x.  Output is componentwise >= 0, with exact zeros preserved.
    """
    lvp = params if isinstance(params, LVParams) else lv_params_at(params, float(np.atleast_1d(x)[0]))
    y = np.asarray(y, dtype=float)
    if s > t:
        raise ValueError("lv_flow needs s <= t")
    y1, y2, ok = _dp45(float(y[0]), float(y[1]), float(s), float(t), *lvp.flat(),
                       atol, rtol, max_steps)
    if not ok:
        raise StepFailure(f"LV integration from {s} to {t} exceeded the step budget")
    return np.array([y1, y2])


@njit(cache=True)
def _dp45_many(ys, s, t, r1, r2, be1, be2, l11, l12, l21, l22, atol, rtol, max_steps):
    out = np.empty_like(ys)
    ok = True
    for i in range(ys.shape[0]):
        a, b, good = _dp45(ys[i, 0], ys[i, 1], s, t, r1, r2, be1, be2,
                           l11, l12, l21, l22, atol, rtol, max_steps)
        out[i, 0] = a
        out[i, 1] = b
        ok = ok and good
    return out, ok


def lv_flow_many(ys, s, t, lvp, atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL):
    """Flow a whole (N, 2) cloud from s to t with one shared parameter set."""
    ys = np.ascontiguousarray(np.asarray(ys, dtype=float).reshape(-1, 2))
    out, ok = _dp45_many(ys, float(s), float(t), *lvp.flat(), atol, rtol, 10_000_000)
    if not ok:
        raise StepFailure("LV integration exceeded the step budget for some particle")
    return out


@dataclass(frozen=True)
class EquilibriumReport:
    case: str                 # boundary-1 | boundary-2 | coexistence | unclassified
    pi: np.ndarray
    cond1: float              # r2 l11 - r1 l21
    cond2: float              # r1 l22 - r2 l12
    case3_pair: tuple         # (r2 l11 - r1 l12, r1 l22 - r2 l21), as printed


def lv_equilibrium(lvp):
    """Classify the long-time LV limit and return the equilibrium point.

    The sign conditions are the printed ones (beta-free); the case-3
    condition pair is printed with swapped off-diagonal subscripts relative
    to cases 1-2, so coexistence is resolved by the componentwise positivity
    of the closed-form interior point.  Instances where no case's strict
    conditions hold (including the bistable sign pattern, where the limit
    depends on the initial condition) come back "unclassified".
    """
    r1, r2, be1, be2 = lvp.r1, lvp.r2, lvp.beta1, lvp.beta2
    l = lvp.lam
    cond1 = r2 * l[0, 0] - r1 * l[1, 0]
    cond2 = r1 * l[1, 1] - r2 * l[0, 1]
    c3a = r2 * l[0, 0] - r1 * l[0, 1]
    c3b = r1 * l[1, 1] - r2 * l[1, 0]
    pair = (c3a, c3b)
    zero = np.zeros(2)
    if not (r1 > 0 and r2 > 0 and be1 > 0 and be2 > 0):
        return EquilibriumReport("unclassified", zero, cond1, cond2, pair)
    if cond1 <= 0 and cond2 > 0 and l[0, 0] > 0:
        return EquilibriumReport("boundary-1", np.array([r1 / (be1 * l[0, 0]), 0.0]),
                                 cond1, cond2, pair)
    if cond2 <= 0 and cond1 > 0 and l[1, 1] > 0:
        return EquilibriumReport("boundary-2", np.array([0.0, r2 / (be2 * l[1, 1])]),
                                 cond1, cond2, pair)
    if cond1 > 0 and cond2 > 0:
        den = be1 * be2 * (l[0, 1] * l[1, 0] - l[0, 0] * l[1, 1])
        if den != 0.0:
            pi1 = (be1 * l[0, 1] * r2 - be2 * l[1, 1] * r1) / den
            pi2 = (be2 * l[1, 0] * r1 - be1 * l[0, 0] * r2) / den
            if pi1 > 0 and pi2 > 0:
                return EquilibriumReport("coexistence", np.array([pi1, pi2]),
                                         cond1, cond2, pair)
    return EquilibriumReport("unclassified", zero, cond1, cond2, pair)
