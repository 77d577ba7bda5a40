"""Figure rendering for the report path.

Figures are a convenience layer on top of the CSV payloads (which remain the
reproducible data contract); they are written as PNG files next to the CSVs
and can be disabled with report.figures: false or --no-figures.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine import OBS_COLUMNS


def _save(fig, root, name):
    fig.tight_layout()
    fig.savefig(root / name, dpi=130)
    plt.close(fig)
    return name


def simulation_figures(root, cfg, rs):
    out = []
    t = rs.times
    fig, ax = plt.subplots(figsize=(6, 4))
    mean, se = rs.mean_se("mass")
    for r in range(min(rs.nrep, 30)):
        ax.plot(t, rs.col("mass")[r], color="steelblue", alpha=0.15, lw=0.7)
    ax.plot(t, mean, color="crimson", lw=2, label="replicate mean")
    ax.fill_between(t, mean - 3 * se, mean + 3 * se, color="crimson", alpha=0.25,
                    label="±3 SE")
    ax.set_xlabel("t")
    ax.set_ylabel("total mass")
    ax.legend(frameon=False)
    out.append(_save(fig, root, "mass.png"))

    if len(rs.tf_names) > 0:
        from .analysis import martingale_residuals
        fig, axes = plt.subplots(1, len(rs.tf_names),
                                 figsize=(4 * len(rs.tf_names), 3.2), squeeze=False)
        for j, name in enumerate(rs.tf_names):
            rep = martingale_residuals(rs, name)
            ax = axes[0][j]
            ax.axhline(0.0, color="k", lw=0.7)
            ax.plot(t, rep.mean, color="crimson", lw=1.5)
            ax.fill_between(t, rep.mean - 3 * rep.se, rep.mean + 3 * rep.se,
                            color="crimson", alpha=0.25)
            ax.set_title(f"residual: {name}", fontsize=10)
            ax.set_xlabel("t")
        out.append(_save(fig, root, "residuals.png"))

        fig, axes = plt.subplots(1, len(rs.tf_names),
                                 figsize=(4 * len(rs.tf_names), 3.2), squeeze=False)
        for j, name in enumerate(rs.tf_names):
            rep = martingale_residuals(rs, name)
            ax = axes[0][j]
            ax.plot(t, rep.emp_qv_mean, label="empirical", color="steelblue")
            ax.plot(t, rep.model_qv_mean, label="model", color="k", ls="--")
            ax.set_title(f"QV: {name}", fontsize=10)
            ax.set_xlabel("t")
            ax.legend(frameon=False, fontsize=8)
        out.append(_save(fig, root, "quadratic_variation.png"))
    return out


def density_figures(root, cfg, res):
    out = []
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(res.times, res.mass, marker="o", ms=3)
    ax.set_xlabel("t")
    ax.set_ylabel("total mass")
    out.append(_save(fig, root, "solver_mass.png"))

    snap = res.snapshots[-1]
    fig, ax = plt.subplots(figsize=(5, 4.2))
    img = snap.vals.sum(axis=0).T * snap.dx
    im = ax.imshow(img, origin="lower", aspect="auto",
                   extent=[snap.y1[0], snap.y1[-1], snap.y2[0], snap.y2[-1]],
                   cmap="viridis")
    fig.colorbar(im, ax=ax, label="density")
    ax.set_xlabel("y1")
    ax.set_ylabel("y2")
    ax.set_title(f"t = {snap.time:g}")
    out.append(_save(fig, root, "density_final.png"))
    return out


def scaling_figure(root, fit, name="scaling_fit.png"):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(fit.Ks, fit.variances, "o", color="steelblue")
    xs = np.array([fit.Ks[0], fit.Ks[-1]])
    c = fit.variances[0] / fit.Ks[0] ** fit.slope
    ax.loglog(xs, c * xs ** fit.slope, "k--",
              label=f"slope {fit.slope:.3f} [{fit.ci_lo:.3f}, {fit.ci_hi:.3f}]")
    ax.set_xlabel("K")
    ax.set_ylabel("variance")
    ax.legend(frameon=False)
    out = _save(fig, root, name)
    return [out]
