"""Scaling harness: produce the kappa-rescaled effective parameter packs.

Under H2 the individual rates are evaluated at (n1/K1, n2/K2) (the equality
form of the closeness assumption: the user supplies B, D, alpha directly as
functions of the rescaled arguments), the competition kernel becomes U/K and
the cell interaction matrix lambda_ij/K_j; p, M and the cell ecological
rates stay untouched.

Under H3 there is additionally an acceleration K^eta * Gamma of individual
births and deaths, an acceleration K_i * gamma of cell births and deaths,
and a mutation kernel shrunk to std sigma(x)/K^(eta/2).
"""

from dataclasses import dataclass

import numpy as np

from .errors import EllipticityViolated, SchemaError
from .params import (EffectiveParams, pack_funcs, raw_effective)

TAGS = ("none", "H2", "H3-deterministic", "H3-super")


@dataclass(frozen=True)
class ScalingRegime:
    K: int = 1
    K1: int = 1
    K2: int = 1
    eta: float = 1.0
    tag: str = "none"

    def __post_init__(self):
        if self.tag not in TAGS:
            raise SchemaError("regime.tag", f"must be one of {TAGS}")
        if min(self.K, self.K1, self.K2) < 1:
            raise SchemaError("regime.K", "K, K1, K2 must be positive integers")
        if not (0.0 < self.eta <= 1.0):
            raise SchemaError("regime.eta", "eta must lie in (0, 1]")
        if self.tag == "H3-super" and self.eta != 1.0:
            raise SchemaError("regime.eta", "H3-super means eta = 1")
        if self.tag == "H3-deterministic" and not self.eta < 1.0:
            raise SchemaError("regime.eta", "H3-deterministic needs eta < 1")


def rescale_params_h2(params, regime):
    """H2 pack: rescaled cell arguments, U/K, lambda/K_j; everything else fixed."""
    assert regime.tag == "H2"
    base = raw_effective(params)
    lam_eff = params.lam / np.array([[regime.K1, regime.K2], [regime.K1, regime.K2]], dtype=float)
    return EffectiveParams(
        funcs=base.funcs,
        box_lo=base.box_lo, box_hi=base.box_hi,
        K=regime.K, K1=regime.K1, K2=regime.K2,
        accel_indiv=0.0, cacc1=0.0, cacc2=0.0,
        u_scale=1.0 / regime.K,
        lam_eff=lam_eff,
        mut_scale=1.0,
        cbar=base.cbar, smax=base.smax,
        tag="H2",
    )


def rescale_params_h3(params, regime, ellipticity_lattice=33):
    """H3 pack: K^eta Gamma accelerated individual rates, K_i gamma accelerated
    cell rates, mutation std sigma/K^(eta/2), U/K and lambda/K_j."""
    assert regime.tag in ("H3-deterministic", "H3-super")
    if params.Gamma is None or params.gamma is None or params.sigma is None:
        raise EllipticityViolated("H3 needs Gamma, gamma and sigma in the model block")
    # (H3)-5: p, sigma, gamma, Gamma must be bounded below by positive constants
    xs = np.linspace(params.box.lo[0], params.box.hi[0], ellipticity_lattice)
    for nm, fn in (("p", params.p), ("sigma", params.sigma), ("gamma", params.gamma)):
        vals = [fn.trait(x0) for x0 in xs]
        if min(vals) <= 0:
            raise EllipticityViolated(f"{nm} has a nonpositive sampled value {min(vals)}")
    for x0 in xs:
        for y in (0.0, 0.5, 1.0, 5.0):
            if params.Gamma.xy(x0, y, y) <= 0:
                raise EllipticityViolated(f"Gamma({x0},{y},{y}) <= 0")
    lam_eff = params.lam / np.array([[regime.K1, regime.K2], [regime.K1, regime.K2]], dtype=float)
    # the mutation envelope scale shrinks with the kernel, so Cbar is unchanged
    return EffectiveParams(
        funcs=pack_funcs(params, h3=True),
        box_lo=params.box.lo.copy(), box_hi=params.box.hi.copy(),
        K=regime.K, K1=regime.K1, K2=regime.K2,
        accel_indiv=float(regime.K) ** regime.eta,
        cacc1=float(regime.K1), cacc2=float(regime.K2),
        u_scale=1.0 / regime.K,
        lam_eff=lam_eff,
        mut_scale=float(regime.K) ** (-regime.eta / 2.0),
        cbar=params.cbar, smax=params.smax,
        tag=regime.tag,
    )


def make_effective(params, regime):
    if regime.tag == "none":
        eff = raw_effective(params)
        if (regime.K, regime.K1, regime.K2) != (1, 1, 1):
            # raw process observed under rescaled weights (no rate substitution)
            eff = EffectiveParams(
                funcs=eff.funcs, box_lo=eff.box_lo, box_hi=eff.box_hi,
                K=regime.K, K1=regime.K1, K2=regime.K2,
                accel_indiv=0.0, cacc1=0.0, cacc2=0.0,
                u_scale=1.0, lam_eff=eff.lam_eff, mut_scale=1.0,
                cbar=eff.cbar, smax=eff.smax, tag="none")
        return eff
    if regime.tag == "H2":
        return rescale_params_h2(params, regime)
    return rescale_params_h3(params, regime)


@dataclass(frozen=True)
class RescaledMeasure:
    """Finite point measure with atoms (x, y1, y2) and a common weight 1/K."""

    traits: np.ndarray   # (I, d)
    y1: np.ndarray
    y2: np.ndarray
    weight: float

    @property
    def size(self):
        return self.y1.shape[0]

    @property
    def mass(self):
        return self.weight * self.size

    def pair(self, f, g1, g2):
        """<measure, f g1 g2> as a weighted sum over atoms."""
        if self.size == 0:
            return 0.0
        s = 0.0
        for i in range(self.size):
            s += f(self.traits[i]) * g1(self.y1[i]) * g2(self.y2[i])
        return self.weight * s

    def moments(self):
        w = self.weight
        return {
            "mass": self.mass,
            "y1": w * float(self.y1.sum()),
            "y2": w * float(self.y2.sum()),
            "y1sq": w * float((self.y1 ** 2).sum()),
            "y2sq": w * float((self.y2 ** 2).sum()),
            "y1y2": w * float((self.y1 * self.y2).sum()),
        }


def empirical_measure(pop, regime=None):
    """Rescaled empirical measure of a Population: atoms (x, n1/K1, n2/K2), weight 1/K."""
    eff = pop.eff
    return RescaledMeasure(
        traits=pop.x.copy(),
        y1=pop.n1 * eff.a1,
        y2=pop.n2 * eff.a2,
        weight=eff.w,
    )
