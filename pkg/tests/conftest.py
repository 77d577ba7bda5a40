import numpy as np
import pytest

from twolevel.params import (Envelopes, ModelParams, TraitBox, const,
                             validate_params)


def build_model(B=0.5, D=0.0, alpha=0.0, U=0.0, p=0.0, mut_std=0.05,
                b1=0.0, b2=0.0, d1=0.0, d2=0.0, beta1=0.0, beta2=0.0,
                lam=((0.0, 0.0), (0.0, 0.0)), Gamma=None, gamma=None,
                sigma=None, box=((0.0,), (1.0,)), envelopes=None):
    """Constant-coefficient model bundle with generous default envelopes."""
    wrap = lambda v: v if not isinstance(v, (int, float)) else const(v)
    mp = ModelParams(
        box=TraitBox(np.asarray(box[0]), np.asarray(box[1])),
        B=wrap(B), D=wrap(D), alpha=wrap(alpha), U=wrap(U), p=wrap(p),
        mut_std=wrap(mut_std), b1=wrap(b1), b2=wrap(b2), d1=wrap(d1),
        d2=wrap(d2), beta1=wrap(beta1), beta2=wrap(beta2),
        lam=np.asarray(lam, dtype=float),
        Gamma=None if Gamma is None else wrap(Gamma),
        gamma=None if gamma is None else wrap(gamma),
        sigma=None if sigma is None else wrap(sigma))
    env = envelopes or Envelopes(Bbar=1e3, Dbar=1e3, alphabar=1e3, Ubar=1e3)
    return validate_params(mp, env)


@pytest.fixture
def small_model():
    return build_model(B=2.0, D=1.0, alpha=0.5, U=0.3, p=0.3, mut_std=0.08,
                       b1=0.5, b2=0.4, d1=0.1, d2=0.1, beta1=0.2, beta2=0.3,
                       lam=((1.0, 0.5), (0.5, 1.0)))
