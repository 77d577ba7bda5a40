"""Statistical verification layer.

Test functions are products f(x) g1(y1) g2(y2) drawn from a small registry of
closed forms with a smoothness tier.  Martingale residuals come straight from
the engine's event-exact accumulators (pairing minus initial value minus the
integrated drift of the kappa-level equations, which use finite differences
g(y +- 1/K_i), so any tier works there).  The limit-generator drift replaces
the differences by g' and therefore demands the C1 tier; asking for it with a
coarser tier raises TierMismatch.

Two independent implementations of the drift/QV integrands (a "rates view"
built on channel_rates with expected pairing jumps, and a "generator view"
that writes the integrand terms directly, with the mutation integral done by
quadrature) serve as each other's oracle.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import forms
from .errors import DegenerateSeries, TierMismatch
from .params import (FALPHA, FB, FB1, FB2, FBETA1, FBETA2, FD, FD1, FD2,
                     FGAMMA, FGAMMAC, FP, channel_rates, competition_field)


@dataclass(frozen=True)
class TestFunction:
    name: str
    f: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    tier: str = "C2"            # bounded | C1 | C2
    bound: Optional[float] = None  # sup of |f g1 g2| for weak-distance scaling

    def packed(self):
        return (self.f, self.g1, self.g2)

    def f_val(self, x):
        x0 = float(np.atleast_1d(x)[0])
        return forms.py_eval_xy(self.f, x0, 0.0, 0.0)

    def g1_val(self, y):
        return forms.py_eval_g(self.g1, y)

    def g2_val(self, y):
        return forms.py_eval_g(self.g2, y)

    def _gprime(self, row, y):
        fid = int(row[0])
        p0 = row[1]
        if fid == forms.CONST:
            return 0.0
        if fid == forms.COORD:
            return 1.0
        if fid == forms.EXPNEG_Y:
            return -p0 * math.exp(-p0 * y)
        if fid == forms.SQUARE:
            return 2.0 * y
        raise TierMismatch(f"{self.name}: g-factor has no derivative (tier {self.tier})")

    def g1_prime(self, y):
        if self.tier == "bounded":
            raise TierMismatch(f"{self.name} is not C1; the limit drift needs g'")
        return self._gprime(self.g1, y)

    def g2_prime(self, y):
        if self.tier == "bounded":
            raise TierMismatch(f"{self.name} is not C1; the limit drift needs g'")
        return self._gprime(self.g2, y)


def tf_mass():
    one = forms.pack("const", [1.0])
    return TestFunction("mass", one, one, one, tier="C2", bound=1.0)


def tf_coord(which, cap=None):
    """g(y) = y_i, or min(y_i, cap) for the bounded tier."""
    one = forms.pack("const", [1.0])
    if cap is None:
        g = forms.pack("coord", [])
        rows = (g, one) if which == 1 else (one, g)
        return TestFunction(f"y{which}", one, rows[0], rows[1], tier="C2", bound=None)
    g = forms.pack("capped", [cap])
    rows = (g, one) if which == 1 else (one, g)
    return TestFunction(f"y{which}cap", one, rows[0], rows[1], tier="bounded", bound=cap)


def tf_exp_y(z1, z2):
    one = forms.pack("const", [1.0])
    return TestFunction(f"exp_y_{z1:g}_{z2:g}", one,
                        forms.pack("expneg_y", [z1]), forms.pack("expneg_y", [z2]),
                        tier="C2", bound=1.0)


def tf_exp_x(a, box_lo=0.0):
    one = forms.pack("const", [1.0])
    return TestFunction(f"exp_x_{a:g}", forms.pack("expneg_x", [1.0, a]), one, one,
                        tier="C2", bound=math.exp(-a * box_lo))


def tf_square(which):
    one = forms.pack("const", [1.0])
    g = forms.pack("square", [])
    rows = (g, one) if which == 1 else (one, g)
    return TestFunction(f"y{which}sq", one, rows[0], rows[1], tier="C2", bound=None)


def pair(measure, tf):
    """<measure, f g1 g2> for anything exposing .pair(f, g1, g2)."""
    return measure.pair(tf.f_val, tf.g1_val, tf.g2_val)


def weak_distance(mA, mB, tfs):
    """Max pairing gap over a registry of bounded test functions.

    Each test function is normalized by its sup bound, so the result is a
    bounded-Lipschitz-style proxy for the weak topology.
    """
    worst = 0.0
    for tf in tfs:
        if tf.bound is None or tf.bound <= 0:
            raise ValueError(f"{tf.name}: weak_distance needs a finite sup bound")
        worst = max(worst, abs(pair(mA, tf) - pair(mB, tf)) / tf.bound)
    return worst


@dataclass
class MartingaleReport:
    tf_name: str
    times: np.ndarray
    residuals: np.ndarray       # (nrep, ngrid) residual paths
    mean: np.ndarray
    se: np.ndarray
    emp_qv_mean: np.ndarray
    model_qv_mean: np.ndarray
    limit_qv_mean: Optional[np.ndarray] = None

    def max_abs_mean_over_se(self, skip_initial=1):
        sl = slice(skip_initial, None)
        se = np.where(self.se[sl] > 0, self.se[sl], np.inf)
        return float(np.max(np.abs(self.mean[sl]) / se))

    def qv_rel_error_at_horizon(self):
        m = self.model_qv_mean[-1]
        return abs(self.emp_qv_mean[-1] - m) / m if m > 0 else 0.0

    def qv_sup_rel_error(self, n_points=10):
        idx = np.unique(np.linspace(1, len(self.times) - 1, n_points).astype(int))
        m = self.model_qv_mean[idx]
        ok = m > 0
        if not np.any(ok):
            return 0.0
        return float(np.max(np.abs(self.emp_qv_mean[idx][ok] - m[ok]) / m[ok]))


def martingale_residuals(rep_set, tf_name):
    """Assemble the martingale report of one test function from a ReplicateSet.

    The engine integrates the kappa-level drift event-exactly (the integrand
    is piecewise constant between jumps and is advanced in closed form), so
    the residual at a grid time is pairing(t) - pairing(0) - integral, with no
    quadrature bias on the observation grid.
    """
    pairing = rep_set.tf_col(tf_name, "pairing")
    drift = rep_set.tf_col(tf_name, "drift_int")
    res = pairing - pairing[:, :1] - drift
    n = res.shape[0]
    se = res.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(res.shape[1])
    return MartingaleReport(
        tf_name=tf_name,
        times=rep_set.times,
        residuals=res,
        mean=res.mean(axis=0),
        se=se,
        emp_qv_mean=rep_set.tf_col(tf_name, "emp_qv").mean(axis=0),
        model_qv_mean=rep_set.tf_col(tf_name, "model_qv").mean(axis=0),
        limit_qv_mean=rep_set.tf_col(tf_name, "limit_qv").mean(axis=0),
    )


def _mutation_expectation(tf, x0, eff, power=1, n_quad=200):
    """E[f(x+z)^power] under the truncated mutation kernel, by quadrature."""
    s = eff.mut_std_at(x0)
    lo, hi = eff.box_lo[0] - x0, eff.box_hi[0] - x0
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    z = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    wq = 0.5 * (hi - lo) * weights
    dens = np.exp(-z * z / (2 * s * s)) / (math.sqrt(2 * math.pi) * s)
    mass = float((wq * dens).sum())
    fx = np.array([forms.py_eval_xy(tf.f, x0 + zi, 0.0, 0.0) ** power for zi in z])
    return float((wq * dens * fx).sum()) / mass


def drift_rates_view(pop, tf):
    """Drift integrand from the simulator's channel rates.

    Sums rate * (expected pairing jump) over the seven channels of every
    individual; the mutant-birth jump uses the quadrature expectation of f
    under the truncated kernel.
    """
    eff = pop.eff
    w, a1, a2 = eff.w, eff.a1, eff.a2
    total = 0.0
    for i in range(pop.size):
        x0 = float(pop.x[i][0])
        y1 = pop.n1[i] * a1
        y2 = pop.n2[i] * a2
        cr = channel_rates(pop.x[i], pop.n1[i], pop.n2[i], pop.comp[i], eff)
        fv = tf.f_val(pop.x[i])
        g1v, g2v = tf.g1_val(y1), tf.g2_val(y2)
        ef = fv if cr.mutant_birth == 0 else _mutation_expectation(tf, x0, eff)
        jumps = (
            w * fv * g1v * g2v,
            w * ef * g1v * g2v,
            -w * fv * g1v * g2v,
            w * fv * (tf.g1_val(y1 + a1) - g1v) * g2v,
            w * fv * g1v * (tf.g2_val(y2 + a2) - g2v),
            w * fv * (tf.g1_val(y1 - a1) - g1v) * g2v,
            w * fv * g1v * (tf.g2_val(y2 - a2) - g2v),
        )
        total += sum(r * j for r, j in zip(cr, jumps))
    return total


def drift_generator_view(pop, tf):
    """Drift integrand written directly from the rescaled-generator formula."""
    eff = pop.eff
    w, a1, a2 = eff.w, eff.a1, eff.a2
    K1, K2 = eff.K1, eff.K2
    lamr = eff.lam_eff * np.array([[K1, K2], [K1, K2]], dtype=float)
    total = 0.0
    for i in range(pop.size):
        x0 = float(pop.x[i][0])
        y1 = pop.n1[i] * a1
        y2 = pop.n2[i] * a2
        gam = eff.fxy(FGAMMA, x0, y1, y2) if eff.accel_indiv > 0 else 0.0
        B = eff.accel_indiv * gam + eff.fxy(FB, x0, y1, y2)
        D = eff.accel_indiv * gam + eff.fxy(FD, x0, y1, y2)
        al = eff.fxy(FALPHA, x0, y1, y2)
        pm = eff.ftrait(FP, x0)
        ust = competition_field(pop.x[i], pop.x, eff)
        fv = tf.f_val(pop.x[i])
        g1v, g2v = tf.g1_val(y1), tf.g2_val(y2)
        gc = eff.ftrait(FGAMMAC, x0)
        b1 = eff.cacc1 * gc + eff.ftrait(FB1, x0)
        b2 = eff.cacc2 * gc + eff.ftrait(FB2, x0)
        d1 = eff.cacc1 * gc + eff.ftrait(FD1, x0)
        d2 = eff.cacc2 * gc + eff.ftrait(FD2, x0)
        be1 = eff.ftrait(FBETA1, x0)
        be2 = eff.ftrait(FBETA2, x0)
        term = (B * (1 - pm) - (D + al * ust)) * fv * g1v * g2v
        if pm > 0 and B > 0:
            # adaptive quadrature here, Gauss-Legendre in the rates view:
            # the two implementations must not share the mutation integral
            from scipy.integrate import quad
            s = eff.mut_std_at(x0)
            lo, hi = eff.box_lo[0] - x0, eff.box_hi[0] - x0
            dens = lambda z: math.exp(-z * z / (2 * s * s))
            mass_, _ = quad(dens, lo, hi, epsabs=1e-13, epsrel=1e-12)
            num, _ = quad(lambda z: forms.py_eval_xy(tf.f, x0 + z, 0.0, 0.0) * dens(z),
                          lo, hi, epsabs=1e-13, epsrel=1e-12)
            term += pm * B * (num / mass_) * g1v * g2v
        term += fv * (tf.g1_val(y1 + 1.0 / K1) - g1v) * g2v * b1 * K1 * y1
        term += fv * g1v * (tf.g2_val(y2 + 1.0 / K2) - g2v) * b2 * K2 * y2
        term += (fv * (tf.g1_val(y1 - 1.0 / K1) - g1v) * g2v
                 * (d1 + be1 * (lamr[0, 0] * y1 + lamr[0, 1] * y2)) * K1 * y1)
        term += (fv * g1v * (tf.g2_val(y2 - 1.0 / K2) - g2v)
                 * (d2 + be2 * (lamr[1, 0] * y1 + lamr[1, 1] * y2)) * K2 * y2)
        total += w * term
    return total


def qv_rates_view(pop, tf):
    """Quadratic-variation integrand: rate * (pairing jump)^2 over channels."""
    eff = pop.eff
    w, a1, a2 = eff.w, eff.a1, eff.a2
    total = 0.0
    for i in range(pop.size):
        x0 = float(pop.x[i][0])
        y1 = pop.n1[i] * a1
        y2 = pop.n2[i] * a2
        cr = channel_rates(pop.x[i], pop.n1[i], pop.n2[i], pop.comp[i], eff)
        fv = tf.f_val(pop.x[i])
        g1v, g2v = tf.g1_val(y1), tf.g2_val(y2)
        ef2 = fv * fv if cr.mutant_birth == 0 else _mutation_expectation(tf, x0, eff, power=2)
        sq = (
            (w * fv * g1v * g2v) ** 2,
            w * w * ef2 * g1v * g1v * g2v * g2v,
            (w * fv * g1v * g2v) ** 2,
            (w * fv * (tf.g1_val(y1 + a1) - g1v) * g2v) ** 2,
            (w * fv * g1v * (tf.g2_val(y2 + a2) - g2v)) ** 2,
            (w * fv * (tf.g1_val(y1 - a1) - g1v) * g2v) ** 2,
            (w * fv * g1v * (tf.g2_val(y2 - a2) - g2v)) ** 2,
        )
        total += sum(r * j for r, j in zip(cr, sq))
    return total


def limit_drift_integrand(measure, tf, lvp, B, D, alpha, U0, p=0.0):
    """Limit-generator drift <v, A(v) fgg> (needs the C1 tier for g').

    measure is a RescaledMeasure-like object with traits/y1/y2/weight; the
    coefficients are the constant mean-field ones.
    """
    if tf.tier == "bounded":
        raise TierMismatch(f"{tf.name}: limit drift contains g', needs C1 tier")
    mass = measure.mass
    lam = lvp.lam
    total = 0.0
    for i in range(measure.size):
        y1 = measure.y1[i]
        y2 = measure.y2[i]
        fv = tf.f_val(measure.traits[i])
        g1v, g2v = tf.g1_val(y1), tf.g2_val(y2)
        c1 = y1 * (lvp.r1 - lvp.beta1 * (lam[0, 0] * y1 + lam[0, 1] * y2))
        c2 = y2 * (lvp.r2 - lvp.beta2 * (lam[1, 0] * y1 + lam[1, 1] * y2))
        term = (B * (1 - p) - (D + alpha * U0 * mass)) * fv * g1v * g2v
        term += fv * tf.g1_prime(y1) * g2v * c1 + fv * g1v * tf.g2_prime(y2) * c2
        total += measure.weight * term
    return total


@dataclass
class ScalingFit:
    slope: float
    ci_lo: float
    ci_hi: float
    Ks: np.ndarray
    variances: np.ndarray


def scaling_exponent_fit(series, n_boot=1000, seed=0):
    """Least-squares slope of log Var against log K, with a bootstrap CI.

    series maps K to either an array of replicate terminal values (bootstrap
    resamples replicates within each K) or directly to a variance (no CI).
    """
    Ks = np.array(sorted(series.keys()), dtype=float)
    samples = {}
    variances = []
    for K in Ks:
        v = np.asarray(series[K], dtype=float)
        if v.ndim == 0:
            variances.append(float(v))
        else:
            samples[K] = v
            variances.append(float(v.var(ddof=1)))
    variances = np.array(variances)
    if np.any(variances <= 0):
        raise DegenerateSeries(f"zero variance entries in {dict(zip(Ks, variances))}")

    def fit(vs):
        A = np.vstack([np.log(Ks), np.ones_like(Ks)]).T
        sol, *_ = np.linalg.lstsq(A, np.log(vs), rcond=None)
        return sol[0]

    slope = fit(variances)
    if len(samples) != len(Ks):
        return ScalingFit(slope, slope, slope, Ks, variances)
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        vs = []
        for K in Ks:
            arr = samples[K]
            pick = rng.integers(0, len(arr), len(arr))
            vs.append(arr[pick].var(ddof=1))
        vs = np.maximum(vs, 1e-300)
        boots[b] = fit(np.array(vs))
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return ScalingFit(slope, float(lo), float(hi), Ks, variances)
