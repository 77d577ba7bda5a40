"""Experiment orchestration and serialization.

One process runs one experiment: build the model, dispatch to the simulator
and/or solvers per the config kind, and write CSV payloads plus a manifest.
Reruns with the same (config, seed) are byte-identical in every CSV: floats
are serialized with repr (shortest round-trip form), row and column order is
fixed, and replicate RNG streams do not depend on thread count.
"""

import csv
import json
import os
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import martingale_residuals, pair
from .config import (build_init, build_model, build_obs_times, build_regime,
                     build_test_functions, config_hash)
from .engine import OBS_COLUMNS, simulate
from .errors import NumericalError
from .lv import lv_equilibrium, lv_params_at
from .meanfield import meanfield_constant_solve, stationary_report
from .params import raw_effective
from .reactdiff import reaction_diffusion_solve
from .scaling import make_effective
from .transport import gaussian_bump, make_grid, transport_mild_solve

OUT_ROOT_ENV = "TWOLEVEL_OUT"


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _traj_rows(chash, rs):
    ntf = len(rs.tf_names)
    for r in range(rs.nrep):
        for it, t in enumerate(rs.times):
            row = [chash, r, t] + [rs.obs[r, it, c] for c in range(len(OBS_COLUMNS))]
            for j in range(ntf):
                row.extend(rs.tf[r, it, j, c] for c in range(5))
            yield row


def _traj_header(rs):
    head = ["config_hash", "replicate", "t"] + list(OBS_COLUMNS)
    for name in rs.tf_names:
        head += [f"pairing_{name}", f"drift_{name}", f"empqv_{name}",
                 f"modelqv_{name}", f"limitqv_{name}"]
    return head


def _report_rows(chash, section, stats):
    """stats: iterable of (statistic, tf, time, value)."""
    for statistic, tf, t, v in stats:
        yield [chash, section, statistic, tf, t, v]


REPORT_HEADER = ["config_hash", "section", "statistic", "tf", "time", "value"]


class _Stages:
    def __init__(self):
        self.records = []

    def run(self, name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as e:
            self.records.append({"stage": name, "wall_s": time.perf_counter() - t0,
                                 "error": f"{type(e).__name__}: {e}"})
            raise
        self.records.append({"stage": name, "wall_s": time.perf_counter() - t0})
        return out


def _solver_initial_grid(cfg, model):
    g = cfg["solver"]["grid"]
    box = model.box
    grid = make_grid(float(box.lo[0]), float(box.hi[0]), g["nx"],
                     g["y1_max"], g["ny1"], g["y2_max"], g["ny2"])
    bi = cfg["solver"]["init"]
    x0 = bi.get("x0", float(0.5 * (box.lo[0] + box.hi[0])))
    return gaussian_bump(grid, x0,
                         bi.get("y10", 0.25 * g["y1_max"]),
                         bi.get("y20", 0.25 * g["y2_max"]),
                         bi.get("sx", 0.2 * (box.hi[0] - box.lo[0])),
                         bi.get("sy1", 0.1 * g["y1_max"]),
                         bi.get("sy2", 0.1 * g["y2_max"]),
                         mass=bi.get("mass", 1.0))


def _grid_to_particles(grid):
    X, Y1, Y2 = np.meshgrid(grid.x, grid.y1, grid.y2, indexing="ij")
    w = (grid.vals * grid.vol).ravel()
    keep = w > 1e-14 * max(w.max(), 1e-300)
    traits = X.ravel()[keep][:, None]
    y0 = np.stack([Y1.ravel()[keep], Y2.ravel()[keep]], axis=1)
    return traits, y0, w[keep]


def run_experiment(cfg, out_dir=None, seed=None, threads=None, figures=None):
    """Execute one experiment config; returns the artifact directory."""
    if threads:
        import numba
        numba.set_num_threads(max(1, int(threads)))
    if seed is not None:
        cfg = dict(cfg)
        cfg["run"] = dict(cfg["run"])
        cfg["run"]["seed"] = int(seed)
    if figures is not None:
        cfg = dict(cfg)
        cfg["report"] = dict(cfg.get("report", {}))
        cfg["report"]["figures"] = bool(figures)
    chash = config_hash(cfg)
    root = Path(out_dir) if out_dir else Path(os.environ.get(OUT_ROOT_ENV, "runs")) / f"{cfg['name']}-{chash}"
    root.mkdir(parents=True, exist_ok=True)
    stages = _Stages()
    outputs = []
    kind = cfg["kind"]

    import yaml
    (root / "resolved_config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    outputs.append("resolved_config.yaml")

    model = stages.run("validate_params", lambda: build_model(cfg))
    report_rows = []
    flags = {}
    try:
        if kind in ("simulate", "analyze", "compare"):
            rs = _stage_simulate(cfg, model, stages)
            path = root / "trajectories.csv"
            stages.run("write_trajectories",
                       lambda: write_csv(path, _traj_header(rs), _traj_rows(chash, rs)))
            outputs.append("trajectories.csv")
            flags["moment_flagged_replicates"] = rs.moment_flags(
                cfg["run"]["mass_ceiling"], cfg["run"]["n2_ceiling"]).tolist()
            report_rows += _sim_report(chash, cfg, rs)
            if kind in ("analyze", "compare"):
                report_rows += _martingale_report_rows(chash, rs)
            if kind == "compare":
                report_rows += _compare_report(chash, cfg, model, rs, stages)
            if cfg["report"]["figures"]:
                from . import figures as figmod
                outputs += stages.run("figures", lambda: figmod.simulation_figures(root, cfg, rs))
        elif kind == "equilibrium":
            report_rows += _equilibrium_report(chash, cfg, model)
        elif kind == "solve":
            report_rows += _stage_solve(chash, cfg, model, root, stages, outputs)
        path = root / "report.csv"
        stages.run("write_report", lambda: write_csv(path, REPORT_HEADER, report_rows))
        outputs.append("report.csv")
    finally:
        manifest = {
            "name": cfg["name"],
            "kind": kind,
            "config_hash": chash,
            "seed": cfg["run"]["seed"],
            "versions": _versions(),
            "stages": stages.records,
            "outputs": outputs,
            "flags": flags,
        }
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def _versions():
    import numba
    import scipy
    return {"twolevel": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _stage_simulate(cfg, model, stages):
    regime = build_regime(cfg)
    eff = make_effective(model, regime)
    x0, n1, n2 = build_init(cfg)
    obs = build_obs_times(cfg)
    tfs = {name: tf.packed() for name, tf in build_test_functions(cfg).items()}
    run = cfg["run"]
    eng = cfg["engine"]
    return stages.run("simulate", lambda: simulate(
        eff, x0, n1, n2, run["T"], obs, run["seed"],
        n_replicates=run["replicates"], tfs=tfs,
        event_budget=run["event_budget"], capacity=eng["capacity"],
        sumtree_threshold=eng["sumtree_threshold"], audit_every=eng["audit_every"],
        log_capacity=eng["log_events"]))


def _sim_report(chash, cfg, rs):
    stats = []
    for name in OBS_COLUMNS[1:]:
        mean, se = rs.mean_se(name)
        for t, m, s in zip(rs.times, mean, se):
            stats.append((f"mean_{name}", "", t, m))
            stats.append((f"se_{name}", "", t, s))
    stats.append(("max_audit_rel_err", "", rs.times[-1], float(rs.meta[:, 5].max())))
    stats.append(("extinct_fraction", "", rs.times[-1],
                  float(np.mean(rs.meta[:, 2] >= 0))))
    return list(_report_rows(chash, "simulate", stats))


def _martingale_report_rows(chash, rs):
    stats = []
    for name in rs.tf_names:
        rep = martingale_residuals(rs, name)
        for t, m, s, eq, mq in zip(rep.times, rep.mean, rep.se,
                                   rep.emp_qv_mean, rep.model_qv_mean):
            stats.append(("mean_residual", name, t, m))
            stats.append(("se_residual", name, t, s))
            stats.append(("emp_qv", name, t, eq))
            stats.append(("model_qv", name, t, mq))
        stats.append(("qv_rel_err_T", name, rep.times[-1], rep.qv_rel_error_at_horizon()))
    return list(_report_rows(chash, "martingale", stats))


def _equilibrium_report(chash, cfg, model):
    x_mid = float(0.5 * (model.box.lo[0] + model.box.hi[0]))
    lvp = lv_params_at(model, x_mid)
    eq = lv_equilibrium(lvp)
    stats = [
        ("case", eq.case, 0.0, 0.0),
        ("pi1", "", 0.0, float(eq.pi[0])),
        ("pi2", "", 0.0, float(eq.pi[1])),
        ("cond1", "", 0.0, eq.cond1),
        ("cond2", "", 0.0, eq.cond2),
        ("case3_a", "", 0.0, eq.case3_pair[0]),
        ("case3_b", "", 0.0, eq.case3_pair[1]),
        ("r1", "", 0.0, lvp.r1),
        ("r2", "", 0.0, lvp.r2),
    ]
    if model.B.is_const() and model.D.is_const() and model.U.is_const():
        lin = model.alpha.name == "linear_y"
        rep = stationary_report(model, alpha_linear=model.alpha.params if lin else None)
        for k in ("mass", "R", "U"):
            stats.append((f"stationary_{k}", "", 0.0, rep[k]))
        if lin:
            stats.append(("constraint_target", "", 0.0, rep["constraint_target"]))
            stats.append(("stable_sufficient", "", 0.0, float(rep["stable_sufficient"])))
            stats.append(("conjecture_probe", "", 0.0, 1.0))
    return list(_report_rows(chash, "equilibrium", stats))


def _density_rows(chash, snaps):
    for snap in snaps:
        for ix, xv in enumerate(snap.x):
            for j1, v1 in enumerate(snap.y1):
                for j2, v2 in enumerate(snap.y2):
                    yield [chash, snap.time, xv, v1, v2, snap.vals[ix, j1, j2]]


def _stage_solve(chash, cfg, model, root, stages, outputs):
    sol = cfg["solver"]
    T = cfg["run"]["T"]
    stats = []
    if sol["kind"] == "meanfield":
        grid = _solver_initial_grid(cfg, model)
        traits, y0, w = _grid_to_particles(grid)
        traj = stages.run("meanfield_solve", lambda: meanfield_constant_solve(
            traits, y0, w, model, T, sol["dt_out"],
            atol=sol["ode_atol"], rtol=sol["ode_rtol"]))
        for it, t in enumerate(traj.times):
            stats.append(("mass", "", t, traj.mass[it]))
            for which in ("y1", "y2", "y1sq", "y2sq"):
                stats.append((which, "", t, traj.moment(it, which)))
            cv = traj.cloud_variance(it)
            stats.append(("cloud_var_y1", "", t, float(cv[0])))
            stats.append(("cloud_var_y2", "", t, float(cv[1])))
        lin = model.alpha.name == "linear_y"
        rep = stationary_report(model, alpha_linear=model.alpha.params if lin else None)
        stats.append(("stationary_mass", "", T, rep["mass"]))
        stats.append(("pi1", "", T, rep["pi1"]))
        stats.append(("pi2", "", T, rep["pi2"]))
    else:
        grid = _solver_initial_grid(cfg, model)
        h3 = sol["kind"] == "reactdiff"
        eff = raw_effective(model, h3=h3)
        if h3:
            res = stages.run("reactdiff_solve", lambda: reaction_diffusion_solve(
                grid, eff, T, sol["dt"], out_every=sol["out_every"],
                cfl_safety=sol["cfl_safety"]))
        else:
            res = stages.run("transport_solve", lambda: transport_mild_solve(
                grid, eff, T, sol["dt"], out_every=sol["out_every"],
                picard_tol=sol["picard_tol"], picard_max=sol["picard_max"],
                nsub=sol["nsub"]))
            for m, dists in enumerate(res.picard_distances[:1]):
                for it, dval in enumerate(dists):
                    stats.append((f"picard_dist_slab0_iter{it}", "", 0.0, dval))
        for t, m in zip(res.times, res.mass):
            stats.append(("mass", "", t, m))
        for snap in res.snapshots:
            for which in ("y1", "y2", "y1sq", "y2sq"):
                stats.append((which, "", snap.time, snap.moment(which)))
        dpath = root / "density.csv"
        stages.run("write_density", lambda: write_csv(
            dpath, ["config_hash", "t", "x", "y1", "y2", "value"],
            _density_rows(chash, [res.snapshots[0], res.snapshots[-1]])))
        outputs.append("density.csv")
        if cfg["report"]["figures"]:
            from . import figures as figmod
            outputs.extend(stages.run("figures", lambda: figmod.density_figures(
                root, cfg, res)))
    return list(_report_rows(chash, "solve", stats))


def _compare_report(chash, cfg, model, rs, stages):
    """Simulation against the mean-field limit from the same initial measure."""
    regime = build_regime(cfg)
    eff = make_effective(model, regime)
    x0, n1, n2 = build_init(cfg)
    traits = x0
    y0 = np.stack([n1 / eff.K1, n2 / eff.K2], axis=1)
    w0 = np.full(len(n1), eff.w)
    T = cfg["run"]["T"]
    times = rs.times
    dt_out = float(times[1] - times[0]) if len(times) > 1 else T
    traj = stages.run("meanfield_solve", lambda: meanfield_constant_solve(
        traits, y0, w0, model, T, dt_out))
    tfs = build_test_functions(cfg)
    stats = []
    for it, t in enumerate(times):
        worst = 0.0
        jt = int(np.argmin(np.abs(traj.times - t)))
        for name, tf in tfs.items():
            sim_pair = float(rs.tf_col(name, "pairing")[:, it].mean())
            lim_pair = traj.pair(jt, tf.f_val, tf.g1_val, tf.g2_val)
            stats.append((f"pairing_sim_{name}", name, t, sim_pair))
            stats.append((f"pairing_limit_{name}", name, t, lim_pair))
            if tf.bound:
                worst = max(worst, abs(sim_pair - lim_pair) / tf.bound)
        stats.append(("weak_distance", "", t, worst))
    return list(_report_rows(chash, "compare", stats))
