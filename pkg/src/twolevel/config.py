"""Experiment configuration: one YAML document per experiment.

The loader resolves defaults, validates shapes and ranges (SchemaError
messages carry the offending field path), and produces the validated model
objects.  Every output row of an experiment carries the hash of the resolved
config, so a report can always be traced back to the exact inputs.
"""

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from . import forms
from .analysis import TestFunction, tf_coord, tf_exp_x, tf_exp_y, tf_mass, tf_square
from .errors import ParseError, SchemaError, UnknownRateForm
from .params import Envelopes, ModelParams, RateFn, TraitBox, validate_params
from .scaling import ScalingRegime

KINDS = ("simulate", "solve", "equilibrium", "analyze", "compare")
SOLVER_KINDS = ("meanfield", "transport", "reactdiff")

_RATE_KEYS = ("B", "D", "alpha", "U", "p", "mut_std",
              "b1", "b2", "d1", "d2", "beta1", "beta2")
_OPT_RATE_KEYS = ("Gamma", "gamma", "sigma")

DEFAULT_RATES = {
    "B": {"form": "const", "params": [0.0]},
    "D": {"form": "const", "params": [0.0]},
    "alpha": {"form": "const", "params": [0.0]},
    "U": {"form": "const", "params": [0.0]},
    "p": {"form": "const", "params": [0.0]},
    "mut_std": {"form": "const", "params": [0.05]},
    "b1": {"form": "const", "params": [0.0]},
    "b2": {"form": "const", "params": [0.0]},
    "d1": {"form": "const", "params": [0.0]},
    "d2": {"form": "const", "params": [0.0]},
    "beta1": {"form": "const", "params": [0.0]},
    "beta2": {"form": "const", "params": [0.0]},
}


def _need(d, key, path, typ=None):
    if key not in d:
        raise SchemaError(f"{path}.{key}", "missing required field")
    v = d[key]
    if typ is not None and not isinstance(v, typ):
        raise SchemaError(f"{path}.{key}", f"expected {typ}, got {type(v).__name__}")
    return v


def _num(d, key, path, default=None, lo=None, hi=None):
    v = d.get(key, default)
    if v is None:
        raise SchemaError(f"{path}.{key}", "missing required number")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}.{key}", f"expected a number, got {v!r}")
    v = float(v)
    if lo is not None and v < lo:
        raise SchemaError(f"{path}.{key}", f"{v} below minimum {lo}")
    if hi is not None and v > hi:
        raise SchemaError(f"{path}.{key}", f"{v} above maximum {hi}")
    return v


def _intval(d, key, path, default=None, lo=None):
    v = _num(d, key, path, default=default, lo=lo)
    if v != int(v):
        raise SchemaError(f"{path}.{key}", f"{v} is not an integer")
    return int(v)


def _rate(d, key, path, default=None):
    spec = d.get(key, default)
    if spec is None:
        raise SchemaError(f"{path}.{key}", "missing rate-function spec")
    if not isinstance(spec, dict) or "form" not in spec:
        raise SchemaError(f"{path}.{key}", "rate spec needs {form: name, params: [...]}")
    try:
        fn = RateFn(spec["form"], tuple(float(p) for p in spec.get("params", [])))
        fn.row  # force form/params validation
    except UnknownRateForm as e:
        raise SchemaError(f"{path}.{key}", str(e))
    return fn


def load_config(path):
    """Parse, validate, and resolve a YAML config file."""
    p = Path(path)
    if not p.exists():
        raise ParseError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ParseError(f"{path}: not valid YAML: {e}")
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    return resolve_config(raw)


def resolve_config(raw):
    cfg = copy.deepcopy(raw)
    cfg.setdefault("name", "experiment")
    kind = cfg.setdefault("kind", "simulate")
    if kind not in KINDS:
        raise SchemaError("kind", f"must be one of {KINDS}")

    # ---- model ----
    model = cfg.setdefault("model", {})
    box = model.setdefault("box", {"lo": [0.0], "hi": [1.0]})
    lo = _need(box, "lo", "model.box", list)
    hi = _need(box, "hi", "model.box", list)
    if len(lo) != len(hi) or not lo:
        raise SchemaError("model.box", "lo and hi need equal positive length")
    for key in _RATE_KEYS:
        model.setdefault(key, copy.deepcopy(DEFAULT_RATES[key]))
        _rate(model, key, "model")
    for key in _OPT_RATE_KEYS:
        if key in model and model[key] is not None:
            _rate(model, key, "model")
    lam = model.setdefault("lam", [[0.0, 0.0], [0.0, 0.0]])
    arr = np.asarray(lam, dtype=object)
    if arr.shape != (2, 2):
        raise SchemaError("model.lam", f"must be a 2x2 matrix, got shape {arr.shape}")
    try:
        lam_f = np.asarray(lam, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError("model.lam", "entries must be numbers")
    if np.any(lam_f < 0):
        raise SchemaError("model.lam", "entries must be nonnegative")
    env = model.setdefault("envelopes", {})
    for key in ("Bbar", "Dbar", "alphabar", "Ubar"):
        _num(env, key, "model.envelopes", default=env.get(key, None), lo=0.0)
    if "Cbar" in env and env["Cbar"] is not None:
        _num(env, "Cbar", "model.envelopes", lo=0.0)

    # ---- regime ----
    regime = cfg.setdefault("regime", {})
    regime.setdefault("tag", "none")
    if regime["tag"] not in ("none", "H2", "H3-deterministic", "H3-super"):
        raise SchemaError("regime.tag", f"unknown tag {regime['tag']!r}")
    K = _intval(regime, "K", "regime", default=1, lo=1)
    regime["K"] = K
    regime["K1"] = _intval(regime, "K1", "regime", default=K, lo=1)
    regime["K2"] = _intval(regime, "K2", "regime", default=K, lo=1)
    regime["eta"] = _num(regime, "eta", "regime", default=1.0)
    if not (0.0 < regime["eta"] <= 1.0):
        raise SchemaError("regime.eta", f"eta={regime['eta']} outside (0, 1]")

    # ---- init ----
    init = cfg.setdefault("init", {})
    ikind = init.setdefault("kind", "fixed")
    if ikind == "fixed":
        _intval(init, "I0", "init", default=init.get("I0", 1), lo=0)
        init.setdefault("I0", 1)
        init.setdefault("trait", [float(np.mean([lo[k], hi[k]])) for k in range(len(lo))])
        _intval(init, "n1", "init", default=init.get("n1", 0), lo=0)
        _intval(init, "n2", "init", default=init.get("n2", 0), lo=0)
        init.setdefault("n1", 0)
        init.setdefault("n2", 0)
    elif ikind == "list":
        inds = _need(init, "individuals", "init", list)
        d = len(lo)
        for i, row in enumerate(inds):
            if len(row) != d + 2:
                raise SchemaError(f"init.individuals[{i}]",
                                  f"need {d} trait coords + n1 + n2")
    else:
        raise SchemaError("init.kind", f"unknown init kind {ikind!r}")

    # ---- run ----
    run = cfg.setdefault("run", {})
    run["T"] = _num(run, "T", "run", default=run.get("T"), lo=0.0)
    obs = run.setdefault("obs", {"start": 0.0, "stop": run["T"], "num": 21})
    if "times" in obs:
        times = [float(t) for t in obs["times"]]
        if sorted(times) != times or (times and times[-1] > run["T"]):
            raise SchemaError("run.obs.times", "must be ascending and <= T")
    else:
        _num(obs, "start", "run.obs", default=0.0, lo=0.0)
        _num(obs, "stop", "run.obs", default=run["T"])
        _intval(obs, "num", "run.obs", default=21, lo=2)
        obs.setdefault("start", 0.0)
        obs.setdefault("stop", run["T"])
        obs.setdefault("num", 21)
        if obs["stop"] > run["T"]:
            raise SchemaError("run.obs.stop", "observation grid must end by T")
    run["replicates"] = _intval(run, "replicates", "run", default=1, lo=1)
    run["seed"] = _intval(run, "seed", "run", default=1)
    run["event_budget"] = _intval(run, "event_budget", "run", default=50_000_000, lo=1)
    run["mass_ceiling"] = _num(run, "mass_ceiling", "run", default=1e9)
    run["n2_ceiling"] = _num(run, "n2_ceiling", "run", default=1e18)

    # ---- engine ----
    eng = cfg.setdefault("engine", {})
    if eng.get("capacity") is not None:
        _intval(eng, "capacity", "engine", lo=2)
    eng.setdefault("capacity", None)
    eng["sumtree_threshold"] = _intval(eng, "sumtree_threshold", "engine", default=4096, lo=1)
    eng["audit_every"] = _intval(eng, "audit_every", "engine", default=10_000, lo=100)
    eng["log_events"] = _intval(eng, "log_events", "engine", default=0, lo=0)

    # ---- analysis ----
    ana = cfg.setdefault("analysis", {})
    tfs = ana.setdefault("test_functions", [])
    if not isinstance(tfs, list):
        raise SchemaError("analysis.test_functions", "must be a list")
    for i, spec in enumerate(tfs):
        if isinstance(spec, str):
            continue
        if not isinstance(spec, dict) or "kind" not in spec:
            raise SchemaError(f"analysis.test_functions[{i}]",
                              "need a shortcut string or {kind: ..., params: [...]}")
    th = ana.setdefault("thresholds", {})
    th["se_mult"] = _num(th, "se_mult", "analysis.thresholds", default=3.0, lo=0.0)
    th["qv_rel"] = _num(th, "qv_rel", "analysis.thresholds", default=0.10, lo=0.0)
    th["slope_tol"] = _num(th, "slope_tol", "analysis.thresholds", default=0.15, lo=0.0)

    # ---- solver ----
    sol = cfg.setdefault("solver", {})
    if kind in ("solve", "compare") or sol:
        skind = sol.setdefault("kind", "meanfield")
        if skind not in SOLVER_KINDS:
            raise SchemaError("solver.kind", f"must be one of {SOLVER_KINDS}")
        grid = sol.setdefault("grid", {})
        grid["nx"] = _intval(grid, "nx", "solver.grid", default=4, lo=1)
        grid["ny1"] = _intval(grid, "ny1", "solver.grid", default=40, lo=4)
        grid["ny2"] = _intval(grid, "ny2", "solver.grid", default=40, lo=4)
        grid["y1_max"] = _num(grid, "y1_max", "solver.grid", default=0.25, lo=0.0)
        grid["y2_max"] = _num(grid, "y2_max", "solver.grid", default=0.25, lo=0.0)
        sol["dt"] = _num(sol, "dt", "solver", default=0.02, lo=0.0)
        sol["out_every"] = _intval(sol, "out_every", "solver", default=10, lo=1)
        sol["picard_tol"] = _num(sol, "picard_tol", "solver", default=1e-8, lo=0.0)
        sol["picard_max"] = _intval(sol, "picard_max", "solver", default=50, lo=1)
        sol["nsub"] = _intval(sol, "nsub", "solver", default=4, lo=1)
        sol["cfl_safety"] = _num(sol, "cfl_safety", "solver", default=0.95, lo=0.0, hi=1.0)
        sol["ode_atol"] = _num(sol, "ode_atol", "solver", default=1e-10, lo=0.0)
        sol["ode_rtol"] = _num(sol, "ode_rtol", "solver", default=1e-8, lo=0.0)
        sol["dt_out"] = _num(sol, "dt_out", "solver", default=1.0, lo=0.0)
        binit = sol.setdefault("init", {"kind": "bump"})
        if binit.get("kind", "bump") not in ("bump", "from_particles"):
            raise SchemaError("solver.init.kind", "must be bump or from_particles")

    # ---- report ----
    rep = cfg.setdefault("report", {})
    rep.setdefault("figures", True)

    return cfg


def config_hash(cfg):
    """Stable short hash of the resolved config.

    The report block (figures on/off and similar presentation toggles) is
    excluded: it cannot change any number in the CSV payloads.
    """
    scientific = {k: v for k, v in cfg.items() if k != "report"}
    blob = json.dumps(scientific, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def build_model(cfg):
    """Validated ModelParams from the model block (runs the (H1) spot checks)."""
    m = cfg["model"]
    box = TraitBox(np.asarray(m["box"]["lo"], dtype=float),
                   np.asarray(m["box"]["hi"], dtype=float))
    kw = {}
    for key in _RATE_KEYS:
        kw[key] = _rate(m, key, "model")
    opt = {}
    for key in _OPT_RATE_KEYS:
        if key in m and m[key] is not None:
            opt[key] = _rate(m, key, "model")
    params = ModelParams(
        box=box, B=kw["B"], D=kw["D"], alpha=kw["alpha"], U=kw["U"], p=kw["p"],
        mut_std=kw["mut_std"], b1=kw["b1"], b2=kw["b2"], d1=kw["d1"], d2=kw["d2"],
        beta1=kw["beta1"], beta2=kw["beta2"], lam=np.asarray(m["lam"], dtype=float),
        Gamma=opt.get("Gamma"), gamma=opt.get("gamma"), sigma=opt.get("sigma"))
    env = m["envelopes"]
    envelopes = Envelopes(Bbar=float(env["Bbar"]), Dbar=float(env["Dbar"]),
                          alphabar=float(env["alphabar"]), Ubar=float(env["Ubar"]),
                          Cbar=env.get("Cbar"))
    return validate_params(params, envelopes)


def build_regime(cfg):
    r = cfg["regime"]
    return ScalingRegime(K=r["K"], K1=r["K1"], K2=r["K2"], eta=r["eta"], tag=r["tag"])


def build_init(cfg):
    init = cfg["init"]
    d = len(cfg["model"]["box"]["lo"])
    if init["kind"] == "fixed":
        I0 = init["I0"]
        x = np.tile(np.asarray(init["trait"], dtype=float), (max(I0, 1), 1))[:I0]
        n1 = np.full(I0, init["n1"], dtype=np.int64)
        n2 = np.full(I0, init["n2"], dtype=np.int64)
        return x, n1, n2
    rows = np.asarray(init["individuals"], dtype=float)
    return (rows[:, :d].copy(),
            rows[:, d].astype(np.int64),
            rows[:, d + 1].astype(np.int64))


def build_obs_times(cfg):
    obs = cfg["run"]["obs"]
    if "times" in obs:
        return np.asarray(obs["times"], dtype=float)
    return np.linspace(obs["start"], obs["stop"], obs["num"])


def build_test_functions(cfg):
    """Named TestFunction objects from the analysis block (shortcuts allowed)."""
    out = {}
    box_lo = float(cfg["model"]["box"]["lo"][0])
    for i, spec in enumerate(cfg["analysis"]["test_functions"]):
        if isinstance(spec, str):
            spec = {"kind": spec}
        kind = spec["kind"]
        prm = spec.get("params", [])
        if kind == "mass":
            tf = tf_mass()
        elif kind == "y1":
            tf = tf_coord(1)
        elif kind == "y2":
            tf = tf_coord(2)
        elif kind == "y1sq":
            tf = tf_square(1)
        elif kind == "y2sq":
            tf = tf_square(2)
        elif kind == "exp_y":
            z1 = float(prm[0]) if prm else 1.0
            z2 = float(prm[1]) if len(prm) > 1 else z1
            tf = tf_exp_y(z1, z2)
        elif kind == "exp_x":
            tf = tf_exp_x(float(prm[0]) if prm else 1.0, box_lo=box_lo)
        elif kind == "capped_y1":
            tf = tf_coord(1, cap=float(prm[0]) if prm else 1.0)
        elif kind == "capped_y2":
            tf = tf_coord(2, cap=float(prm[0]) if prm else 1.0)
        else:
            raise SchemaError(f"analysis.test_functions[{i}].kind",
                              f"unknown test-function kind {kind!r}")
        if "name" in spec:
            tf = TestFunction(spec["name"], tf.f, tf.g1, tf.g2, tf.tier, tf.bound)
        out[tf.name] = tf
    return out
