"""Core model: domain types and pure rate/kernel evaluations.

An individual carries a trait vector x inside a compact box and two integer
cell counts (n1, n2).  Seven event channels drive the dynamics:

    0 clonal birth      B(x,y1,y2) (1 - p(x))
    1 mutant birth      B(x,y1,y2) p(x)
    2 individual death  D(x,y1,y2) + alpha(x,y1,y2) * scaled kernel sum
    3 cell-1 birth      b1(x) n1
    4 cell-2 birth      b2(x) n2
    5 cell-1 death      (d1(x) + beta1(x)(l11 n1 + l12 n2)) n1
    6 cell-2 death      (d2(x) + beta2(x)(l21 n1 + l22 n2)) n2

where (y1, y2) are the (possibly rescaled) cell arguments.  A scaling regime
only changes the numeric pack (EffectiveParams); the channel formulas above
are shared by the reference path here and the compiled event kernel.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import forms
from .errors import BadMatrix, EnvelopeViolated, RejectionStall

CLONAL_BIRTH, MUTANT_BIRTH, DEATH = 0, 1, 2
CELL1_BIRTH, CELL2_BIRTH, CELL1_DEATH, CELL2_DEATH = 3, 4, 5, 6
CHANNEL_NAMES = (
    "clonal_birth",
    "mutant_birth",
    "death",
    "cell1_birth",
    "cell2_birth",
    "cell1_death",
    "cell2_death",
)

# row indices of EffectiveParams.funcs
FB, FD, FALPHA, FGAMMA, FU, FP = 0, 1, 2, 3, 4, 5
FB1, FB2, FD1, FD2, FBETA1, FBETA2 = 6, 7, 8, 9, 10, 11
FGAMMAC, FMUTSTD = 12, 13
NFUNCS = 14


@dataclass(frozen=True)
class TraitBox:
    """Axis-aligned compact trait space [lo_k, hi_k]^d."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError("trait box needs lo < hi componentwise")

    @property
    def d(self):
        return self.lo.shape[0]

    def contains(self, x):
        x = np.atleast_1d(x)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def lattice(self, n_per_dim):
        axes = [np.linspace(self.lo[k], self.hi[k], n_per_dim) for k in range(self.d)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True)
class RateFn:
    """A named closed form with numeric parameters (see forms registry)."""

    name: str
    params: tuple = ()

    @property
    def row(self):
        return forms.pack(self.name, self.params)

    def xy(self, x0, y1, y2):
        return forms.py_eval_xy(self.row, x0, y1, y2)

    def trait(self, x0):
        return forms.py_eval_xy(self.row, x0, 0.0, 0.0)

    def kernel(self, dx):
        return forms.py_eval_kernel(self.row, np.atleast_1d(dx))

    def is_const(self):
        return forms.form_id(self.name) == forms.CONST

    def const_value(self):
        if not self.is_const():
            raise ValueError(f"{self.name} is not constant")
        return float(self.params[0])


def const(v):
    return RateFn("const", (float(v),))


@dataclass(frozen=True)
class Envelopes:
    """(H1) envelope constants, user-supplied."""

    Bbar: float
    Dbar: float
    alphabar: float
    Ubar: float
    Cbar: Optional[float] = None  # computed from the lattice when omitted


@dataclass(frozen=True)
class ModelParams:
    """Validated bundle of all rate functions for one experiment."""

    box: TraitBox
    B: RateFn
    D: RateFn
    alpha: RateFn
    U: RateFn
    p: RateFn
    mut_std: RateFn
    b1: RateFn
    b2: RateFn
    d1: RateFn
    d2: RateFn
    beta1: RateFn
    beta2: RateFn
    lam: np.ndarray
    Gamma: Optional[RateFn] = None
    gamma: Optional[RateFn] = None
    sigma: Optional[RateFn] = None
    envelopes: Optional[Envelopes] = None
    cbar: Optional[float] = None
    smax: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))
        if self.lam.shape != (2, 2):
            raise BadMatrix(f"lambda must be 2x2, got shape {self.lam.shape}")

    def r(self, i, x0=0.0):
        """Net cell growth rate r_i = b_i - d_i at trait x0."""
        b = (self.b1, self.b2)[i - 1]
        d = (self.d1, self.d2)[i - 1]
        return b.trait(x0) - d.trait(x0)


def _trunc_mass(x, s, box):
    """Mass of N(0, s^2 Id) on the shifted box (box - x)."""
    m = 1.0
    for k in range(box.d):
        u = (box.hi[k] - x[k]) / s
        l = (box.lo[k] - x[k]) / s
        m *= 0.5 * (math.erf(u / math.sqrt(2)) - math.erf(l / math.sqrt(2)))
    return m


def validate_params(params, envelopes, lattice_per_dim=11, cell_lattice=10):
    """Spot-check the (H1) bounds on a deterministic lattice and attach envelopes.

    The D and alpha bounds (D <= Dbar*n, alpha <= alphabar*n) are checked at
    lattice points with n1+n2 >= 1: the paper's own constant-coefficient
    mean-field case violates them at n = 0, so that corner is excluded.
    Also computes the mutation-envelope data (Cbar, smax) and raises on a
    negative interaction matrix entry.
    """
    if np.any(params.lam < 0):
        raise BadMatrix("lambda has a negative entry")
    box = params.box
    xs = box.lattice(lattice_per_dim)
    ns = np.arange(0, cell_lattice)
    if xs.shape[0] * cell_lattice * cell_lattice < 1000:
        # grow the cell lattice until the sample has >= 1e3 points
        cell_lattice = int(math.ceil(math.sqrt(1000.0 / xs.shape[0])))
        ns = np.arange(0, cell_lattice)

    def bad(name, detail):
        raise EnvelopeViolated(f"(H1) bound broken for {name}: {detail}")

    for x in xs:
        x0 = x[0]
        for n1 in ns:
            for n2 in ns:
                n = n1 + n2
                bv = params.B.xy(x0, n1, n2)
                if bv > envelopes.Bbar * (1 + 1e-12) or bv < 0:
                    bad("B", f"B({x0},{n1},{n2})={bv} vs Bbar={envelopes.Bbar}")
                if n >= 1:
                    dv = params.D.xy(x0, n1, n2)
                    if dv > envelopes.Dbar * n * (1 + 1e-12) or dv < 0:
                        bad("D", f"D({x0},{n1},{n2})={dv} vs Dbar*n={envelopes.Dbar * n}")
                    av = params.alpha.xy(x0, n1, n2)
                    if av > envelopes.alphabar * n * (1 + 1e-12) or av < 0:
                        bad("alpha", f"alpha({x0},{n1},{n2})={av} vs alphabar*n={envelopes.alphabar * n}")
        pv = params.p.trait(x0)
        if not (0.0 <= pv <= 1.0):
            bad("p", f"p({x0})={pv} outside [0,1]")
        for fn, nm in ((params.b1, "b1"), (params.b2, "b2"), (params.d1, "d1"),
                       (params.d2, "d2"), (params.beta1, "beta1"), (params.beta2, "beta2")):
            v = fn.trait(x0)
            if v < 0:
                bad(nm, f"{nm}({x0})={v} < 0")
    # kernel bound on trait differences
    span = box.hi - box.lo
    for frac in np.linspace(-1, 1, 21):
        uv = params.U.kernel(frac * span)
        if uv > envelopes.Ubar * (1 + 1e-12) or uv < 0:
            bad("U", f"U({frac * span})={uv} vs Ubar={envelopes.Ubar}")

    # mutation envelope: Mbar is the untruncated Gaussian at the largest std,
    # Cbar bounds M(x,z) = phi_{s(x)}(z) 1_box / m(x) against Cbar * Mbar(z)
    stds = np.array([params.mut_std.trait(x[0]) for x in xs])
    if np.any(stds <= 0):
        bad("mut_std", "mutation std must be positive on the box")
    smax = float(stds.max())
    cbar_needed = 0.0
    for x, s in zip(xs, stds):
        m = _trunc_mass(x, s, box)
        cbar_needed = max(cbar_needed, (smax / s) ** box.d / m)
    if envelopes.Cbar is not None:
        if envelopes.Cbar < cbar_needed * (1 - 1e-12):
            bad("M", f"Cbar={envelopes.Cbar} < required {cbar_needed}")
        cbar = float(envelopes.Cbar)
    else:
        cbar = cbar_needed * (1 + 1e-9)
        envelopes = replace(envelopes, Cbar=cbar)
    return replace(params, envelopes=envelopes, cbar=cbar, smax=smax)


@dataclass(frozen=True)
class EffectiveParams:
    """Numeric pack actually consumed by the simulators.

    Produced by the scaling harness; the raw process is the identity pack
    (all scale factors 1, no acceleration).
    """

    funcs: np.ndarray          # (NFUNCS, 5) packed forms
    box_lo: np.ndarray
    box_hi: np.ndarray
    K: int
    K1: int
    K2: int
    accel_indiv: float         # K^eta in front of Gamma (0 when inactive)
    cacc1: float               # K_1 in front of gamma (0 when inactive)
    cacc2: float
    u_scale: float             # 1/K under H2/H3, else 1
    lam_eff: np.ndarray        # lambda_ij / K_j under H2/H3, else lambda
    mut_scale: float           # K^(-eta/2) multiplying the mutation std (H3)
    cbar: float
    smax: float
    tag: str = "none"

    @property
    def w(self):
        return 1.0 / self.K

    @property
    def a1(self):
        return 1.0 / self.K1

    @property
    def a2(self):
        return 1.0 / self.K2

    @property
    def d(self):
        return self.box_lo.shape[0]

    def fxy(self, idx, x0, y1, y2):
        return forms.py_eval_xy(self.funcs[idx], x0, y1, y2)

    def ftrait(self, idx, x0):
        return forms.py_eval_xy(self.funcs[idx], x0, 0.0, 0.0)

    def kernel(self, dx):
        return forms.py_eval_kernel(self.funcs[FU], dx)

    def mut_std_at(self, x0):
        return self.mut_scale * self.ftrait(FMUTSTD, x0)


def pack_funcs(params, h3=False):
    funcs = np.zeros((NFUNCS, 5))
    funcs[FB] = params.B.row
    funcs[FD] = params.D.row
    funcs[FALPHA] = params.alpha.row
    funcs[FGAMMA] = params.Gamma.row if params.Gamma is not None else forms.pack("const", [0.0])
    funcs[FU] = params.U.row
    funcs[FP] = params.p.row
    funcs[FB1] = params.b1.row
    funcs[FB2] = params.b2.row
    funcs[FD1] = params.d1.row
    funcs[FD2] = params.d2.row
    funcs[FBETA1] = params.beta1.row
    funcs[FBETA2] = params.beta2.row
    funcs[FGAMMAC] = params.gamma.row if params.gamma is not None else forms.pack("const", [0.0])
    if h3:
        funcs[FMUTSTD] = params.sigma.row
    else:
        funcs[FMUTSTD] = params.mut_std.row
    return funcs


def raw_effective(params, h3=False):
    """Identity pack: no rescaling.  h3=True loads sigma into the mutation-std
    row (the convention of the accelerated-regime limit equations)."""
    if params.cbar is None:
        raise ValueError("params must pass validate_params first")
    return EffectiveParams(
        funcs=pack_funcs(params, h3=h3),
        box_lo=params.box.lo.copy(),
        box_hi=params.box.hi.copy(),
        K=1, K1=1, K2=1,
        accel_indiv=0.0, cacc1=0.0, cacc2=0.0,
        u_scale=1.0,
        lam_eff=params.lam.copy(),
        mut_scale=1.0,
        cbar=params.cbar,
        smax=params.smax,
        tag="none",
    )


class ChannelRates(tuple):
    """Seven nonnegative per-individual channel rates, in channel order."""

    def __new__(cls, clonal_birth, mutant_birth, death,
                cell1_birth, cell2_birth, cell1_death, cell2_death):
        return super().__new__(cls, (clonal_birth, mutant_birth, death,
                                     cell1_birth, cell2_birth, cell1_death, cell2_death))

    clonal_birth = property(lambda s: s[0])
    mutant_birth = property(lambda s: s[1])
    death = property(lambda s: s[2])
    cell1_birth = property(lambda s: s[3])
    cell2_birth = property(lambda s: s[4])
    cell1_death = property(lambda s: s[5])
    cell2_death = property(lambda s: s[6])

    @property
    def total(self):
        return float(sum(self))


def competition_field(x, traits, eff):
    """Scaled kernel sum sum_j U_kappa(x - x^j) over ALL members (self included)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = 0.0
    for j in range(traits.shape[0]):
        s += eff.kernel(x - traits[j])
    return eff.u_scale * s


def channel_rates(x, n1, n2, comp, eff):
    """Seven channel rates for one individual given its scaled competition field."""
    x0 = float(np.atleast_1d(x)[0])
    y1 = n1 * eff.a1
    y2 = n2 * eff.a2
    gam = eff.fxy(FGAMMA, x0, y1, y2) if eff.accel_indiv > 0 else 0.0
    btot = eff.accel_indiv * gam + eff.fxy(FB, x0, y1, y2)
    pm = eff.ftrait(FP, x0)
    dtot = eff.accel_indiv * gam + eff.fxy(FD, x0, y1, y2) + eff.fxy(FALPHA, x0, y1, y2) * comp
    gc = eff.ftrait(FGAMMAC, x0)
    lam = eff.lam_eff
    c1d = eff.ftrait(FD1, x0) + eff.ftrait(FBETA1, x0) * (lam[0, 0] * n1 + lam[0, 1] * n2)
    c2d = eff.ftrait(FD2, x0) + eff.ftrait(FBETA2, x0) * (lam[1, 0] * n1 + lam[1, 1] * n2)
    return ChannelRates(
        btot * (1.0 - pm),
        btot * pm,
        dtot,
        (eff.cacc1 * gc + eff.ftrait(FB1, x0)) * n1,
        (eff.cacc2 * gc + eff.ftrait(FB2, x0)) * n2,
        (eff.cacc1 * gc + c1d) * n1,
        (eff.cacc2 * gc + c2d) * n2,
    )


def sample_mutant_trait(x, eff, rng):
    """Mutant trait x+z by rejection against Cbar * Mbar.

    Candidates are drawn from the envelope density Mbar = N(0, smax^2 Id) and
    accepted with probability M(x,z) / (Cbar Mbar(z)); candidates leaving the
    trait box are rejected.  Raises RejectionStall after 1e6 misses.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[0]
    s = eff.mut_std_at(x[0])
    senv = eff.smax * eff.mut_scale
    box = TraitBox(eff.box_lo, eff.box_hi)
    mass = _trunc_mass(x, s, box)
    for _ in range(1_000_000):
        z = rng.standard_normal(d) * senv
        cand = x + z
        if not box.contains(cand):
            continue
        # density ratio phi_s(z) / phi_smax(z), times 1/(mass * cbar)
        q = float(z @ z)
        ratio = (senv / s) ** d * math.exp(-q / (2 * s * s) + q / (2 * senv * senv))
        if rng.random() <= ratio / (mass * eff.cbar):
            return cand
    raise RejectionStall("mutation rejection sampling failed 1e6 times; check Cbar/Mbar")


class Population:
    """Reference population state: atom arrays plus cached rate sums.

    The cache invariant (checked by audit) is that per-individual channel
    rates and competition sums equal a from-scratch rebuild to 1e-12
    relative.  This class favors clarity over speed; the compiled engine in
    _kernels.py is the production path.
    """

    def __init__(self, traits, n1, n2, eff):
        self.eff = eff
        n1 = np.asarray(n1, dtype=np.int64)
        if len(n1) == 0:
            self.x = np.zeros((0, eff.d))
        else:
            self.x = np.atleast_2d(np.asarray(traits, dtype=float)).reshape(len(n1), -1)
        self.n1 = n1.copy()
        self.n2 = np.asarray(n2, dtype=np.int64).copy()
        self.comp = np.zeros(self.size)
        self.chan = np.zeros((self.size, 7))
        self.rebuild()

    @property
    def size(self):
        return self.n1.shape[0]

    def rebuild(self):
        for i in range(self.size):
            self.comp[i] = competition_field(self.x[i], self.x, self.eff)
        for i in range(self.size):
            self.chan[i] = channel_rates(self.x[i], self.n1[i], self.n2[i], self.comp[i], self.eff)

    def audit(self, rtol=1e-12):
        """Relative cache drift against a from-scratch rebuild."""
        comp, chan = self.comp.copy(), self.chan.copy()
        self.rebuild()
        scale = max(1.0, float(np.max(np.abs(self.chan))) if self.size else 1.0)
        err = 0.0
        if self.size:
            err = max(float(np.max(np.abs(comp - self.comp))),
                      float(np.max(np.abs(chan - self.chan)))) / scale
        if err > rtol:
            raise AssertionError(f"population cache drifted: rel err {err}")
        return err

    def total_rate(self):
        return float(self.chan.sum())

    def pairing(self, fn):
        """Weighted sum of fn(x, y1, y2) over atoms (weight 1/K each)."""
        w, a1, a2 = self.eff.w, self.eff.a1, self.eff.a2
        return w * sum(fn(self.x[i], self.n1[i] * a1, self.n2[i] * a2) for i in range(self.size))
