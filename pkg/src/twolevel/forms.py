"""Registry of named closed-form scalar functions.

Every rate function, kernel and test-function factor in a config is one of
these forms, encoded as (form id, p0..p3).  The same encoding is evaluated
both from Python (reference paths, validation) and inside the numba event
kernels, so the two code paths share a single source of truth for what a
form means.

Forms over (x0, y1, y2) -- individual-level rates B, D, alpha, Gamma:
    const      p0
    affine_y   p0 + p1*y1 + p2*y2
    linear_y   p0*y1 + p1*y2
    affine_x   p0 + p1*x0
    gauss_x    p0 * exp(-(x0-p1)^2 / (2 p2^2))
    expneg_x   p0 * exp(-p1*x0)

Forms over a trait difference vector -- competition kernel U:
    const, gauss_x (centered: p1 ignored, squared norm of the difference)

Forms over a single y -- test-function factors g1, g2:
    const, coord (y), expneg_y (exp(-p0*y)), square (y^2),
    capped (min(y, p0), p0 > 0)
"""

import math

import numpy as np
from numba import njit

from .errors import UnknownRateForm

CONST = 0
AFFINE_Y = 1
LINEAR_Y = 2
AFFINE_X = 3
GAUSS_X = 4
EXPNEG_X = 5
COORD = 6
EXPNEG_Y = 7
SQUARE = 8
CAPPED = 9

_NAMES = {
    "const": CONST,
    "affine_y": AFFINE_Y,
    "linear_y": LINEAR_Y,
    "affine_x": AFFINE_X,
    "gauss_x": GAUSS_X,
    "expneg_x": EXPNEG_X,
    "coord": COORD,
    "expneg_y": EXPNEG_Y,
    "square": SQUARE,
    "capped": CAPPED,
}
_NPARAMS = {
    CONST: 1,
    AFFINE_Y: 3,
    LINEAR_Y: 2,
    AFFINE_X: 2,
    GAUSS_X: 3,
    EXPNEG_X: 2,
    COORD: 0,
    EXPNEG_Y: 1,
    SQUARE: 0,
    CAPPED: 1,
}

# form kinds accepted in each slot
XY_FORMS = (CONST, AFFINE_Y, LINEAR_Y, AFFINE_X, GAUSS_X, EXPNEG_X)
TRAIT_FORMS = (CONST, AFFINE_X, GAUSS_X, EXPNEG_X)
KERNEL_FORMS = (CONST, GAUSS_X)
F_FORMS = (CONST, EXPNEG_X, GAUSS_X)
G_FORMS = (CONST, COORD, EXPNEG_Y, SQUARE, CAPPED)


def form_id(name):
    try:
        return _NAMES[name]
    except KeyError:
        raise UnknownRateForm(f"unknown rate form {name!r}; known: {sorted(_NAMES)}")


def form_name(fid):
    for k, v in _NAMES.items():
        if v == fid:
            return k
    raise UnknownRateForm(f"unknown form id {fid}")


def pack(name, params):
    """Encode a named form as a length-5 float row [id, p0..p3]."""
    fid = form_id(name)
    params = list(params)
    need = _NPARAMS[fid]
    if len(params) != need:
        raise UnknownRateForm(f"form {name!r} takes {need} parameters, got {len(params)}")
    row = np.zeros(5)
    row[0] = fid
    row[1 : 1 + len(params)] = params
    return row


@njit(cache=True, inline="always")
def eval_xy(fid, p0, p1, p2, x0, y1, y2):
    if fid == CONST:
        return p0
    elif fid == AFFINE_Y:
        return p0 + p1 * y1 + p2 * y2
    elif fid == LINEAR_Y:
        return p0 * y1 + p1 * y2
    elif fid == AFFINE_X:
        return p0 + p1 * x0
    elif fid == GAUSS_X:
        d = x0 - p1
        return p0 * math.exp(-d * d / (2.0 * p2 * p2))
    elif fid == EXPNEG_X:
        return p0 * math.exp(-p1 * x0)
    return 0.0


@njit(cache=True, inline="always")
def eval_g(fid, p0, y):
    if fid == CONST:
        return p0
    elif fid == COORD:
        return y
    elif fid == EXPNEG_Y:
        return math.exp(-p0 * y)
    elif fid == SQUARE:
        return y * y
    elif fid == CAPPED:
        return min(y, p0)
    return 0.0


@njit(cache=True)
def eval_kernel(fid, p0, p1, p2, dx):
    """Competition kernel on a trait difference vector dx."""
    if fid == CONST:
        return p0
    elif fid == GAUSS_X:
        s = 0.0
        for k in range(dx.shape[0]):
            s += dx[k] * dx[k]
        return p0 * math.exp(-s / (2.0 * p2 * p2))
    return 0.0


def py_eval_xy(row, x0, y1, y2):
    """Python mirror of eval_xy for one packed row."""
    fid = int(row[0])
    p0, p1, p2 = row[1], row[2], row[3]
    if fid == CONST:
        return p0
    if fid == AFFINE_Y:
        return p0 + p1 * y1 + p2 * y2
    if fid == LINEAR_Y:
        return p0 * y1 + p1 * y2
    if fid == AFFINE_X:
        return p0 + p1 * x0
    if fid == GAUSS_X:
        return p0 * math.exp(-((x0 - p1) ** 2) / (2 * p2 * p2))
    if fid == EXPNEG_X:
        return p0 * math.exp(-p1 * x0)
    raise UnknownRateForm(f"form id {fid} not valid in an (x,y1,y2) slot")


def np_eval_xy(row, x0, y1, y2):
    """Vectorized mirror of eval_xy; x0 scalar, y1/y2 arrays (or scalars)."""
    fid = int(row[0])
    p0, p1, p2 = row[1], row[2], row[3]
    one = np.ones_like(np.asarray(y1, dtype=float))
    if fid == CONST:
        return p0 * one
    if fid == AFFINE_Y:
        return p0 + p1 * np.asarray(y1) + p2 * np.asarray(y2)
    if fid == LINEAR_Y:
        return p0 * np.asarray(y1) + p1 * np.asarray(y2)
    if fid == AFFINE_X:
        return (p0 + p1 * x0) * one
    if fid == GAUSS_X:
        return p0 * math.exp(-((x0 - p1) ** 2) / (2 * p2 * p2)) * one
    if fid == EXPNEG_X:
        return p0 * math.exp(-p1 * x0) * one
    raise UnknownRateForm(f"form id {fid} not valid in an (x,y1,y2) slot")


def py_eval_g(row, y):
    fid = int(row[0])
    p0 = row[1]
    if fid == CONST:
        return p0
    if fid == COORD:
        return y
    if fid == EXPNEG_Y:
        return math.exp(-p0 * y)
    if fid == SQUARE:
        return y * y
    if fid == CAPPED:
        return min(y, p0)
    raise UnknownRateForm(f"form id {fid} not valid in a g(y) slot")


def py_eval_kernel(row, dx):
    fid = int(row[0])
    p0, p2 = row[1], row[3]
    if fid == CONST:
        return p0
    if fid == GAUSS_X:
        return p0 * math.exp(-float(np.dot(dx, dx)) / (2 * p2 * p2))
    raise UnknownRateForm(f"form id {fid} not valid in a kernel slot")


def _phi(t):
    return 0.5 * (1.0 + math.erf(t / math.sqrt(2.0)))


@njit(cache=True, inline="always")
def nb_phi(t):
    return 0.5 * (1.0 + math.erf(t * 0.7071067811865476))


@njit(cache=True)
def f_trunc_expect(fid, p0, p1, p2, x0, s, lo, hi, power):
    """E[f(x+z)^power] for z ~ N(0, s^2) truncated to [lo - x0, hi - x0].

    Supports const and expneg_x; power is 1 or 2.  These are the f-forms the
    event engine can pair with an active mutation channel; anything else must
    run with p == 0.
    """
    if fid == CONST:
        return p0 ** power
    a = p1 * power
    l = lo - x0
    u = hi - x0
    mass = nb_phi(u / s) - nb_phi(l / s)
    num = nb_phi((u + a * s * s) / s) - nb_phi((l + a * s * s) / s)
    base = (p0 ** power) * math.exp(-a * x0) * math.exp(0.5 * a * a * s * s)
    return base * num / mass


def py_f_trunc_expect(row, x0, s, lo, hi, power=1):
    """Python mirror of f_trunc_expect."""
    fid = int(row[0])
    p0, p1 = row[1], row[2]
    if fid == CONST:
        return p0 ** power
    if fid != EXPNEG_X:
        raise UnknownRateForm("analytic mutation expectation exists only for const/expneg_x")
    a = p1 * power
    l, u = lo - x0, hi - x0
    mass = _phi(u / s) - _phi(l / s)
    num = _phi((u + a * s * s) / s) - _phi((l + a * s * s) / s)
    return (p0 ** power) * math.exp(-a * x0) * math.exp(0.5 * a * a * s * s) * num / mass
