"""Figure rendering for experiment reports (non-interactive Agg backend).

Each function takes a report dict produced by the experiments layer and
renders one PNG.  Figures are a convenience companion to the delimited
artifacts, not part of the determinism contract; the data files stay
authoritative.
"""

import matplotlib

matplotlib.use("Agg")

import numpy as np
import matplotlib.pyplot as plt

from .spectral import ScalingProfile

_SAVE = {"dpi": 110, "metadata": {"Software": "vicseklab"}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def fig_system(X, mesh, path):
    """Lattice layout of the cable system, vertices colored by degree."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for u, w in X.cables:
        a, b = X.vertices[u], X.vertices[w]
        ax.plot([a[0], b[0]], [a[1], b[1]], "-", color="#777777", lw=0.6)
    deg = np.array([len(X._adjacency[v]) for v in range(X.vertex_count())])
    pts = np.asarray(X.vertices)
    sc = ax.scatter(pts[:, 0], pts[:, 1], c=deg, s=4, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="vertex degree")
    ax.set_aspect("equal")
    ax.set_title("cable system: level %d, %d vertices, mesh nodes %d"
                 % (X.level, X.vertex_count(), mesh.n_nodes))
    return _finish(fig, path)


def fig_volume(report, path):
    """Per-center volume curves, their geometric mean, and the fitted line."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    radii = np.asarray(report["radii"])
    vols = np.asarray(report["volumes"])
    for row in vols:
        ax.loglog(radii, row, "-", color="#bbbbbb", lw=0.6)
    mean = 10.0 ** np.log10(vols).mean(axis=0)
    ax.loglog(radii, mean, "o-", color="C0", label="geometric mean")
    fit = report["fit"]
    ax.loglog(radii, 10.0 ** (fit["intercept"] + fit["slope"] * np.log10(radii)),
              "--", color="C3",
              label="fit slope %.3f (exact %.3f)" % (report["alpha_hat"], report["alpha_exact"]))
    ax.set_xlabel("radius r")
    ax.set_ylabel("ball volume")
    ax.legend()
    ax.set_title("volume growth, level %d" % report["level"])
    return _finish(fig, path)


def fig_spectrum(lam, path, title="eigenvalue staircase"):
    """Counting function N(lambda) on log-log axes."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    lam = np.asarray(lam)
    pos = lam[lam > 1e-12]
    ax.loglog(pos, np.arange(1, len(pos) + 1) + (len(lam) - len(pos)), drawstyle="steps-post")
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("count below")
    ax.set_title(title)
    return _finish(fig, path)


def fig_poincare(report, path):
    """Per-level constants against the exact scaling targets."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    lv = np.asarray(report["levels"], dtype=float)
    full = np.asarray(report["constant_full"])
    diag = np.asarray(report["constant_diag"])
    ax.semilogy(lv, full, "o-", label="full constant")
    ax.semilogy(lv, diag, "s-", label="diag constant")
    ax.semilogy(lv, full[0] * 15.0 ** (lv - lv[0]), "--", color="C0", alpha=0.5,
                label="slope 15 reference")
    ax.semilogy(lv, diag[0] * 9.0 ** (lv - lv[0]), "--", color="C1", alpha=0.5,
                label="slope 9 reference")
    ax.set_xticks(lv)
    ax.set_xlabel("level n")
    ax.set_ylabel("best constant")
    ax.legend()
    ax.set_title("skeleton inequality constants (q=2, M=%d)" % report["M"])
    return _finish(fig, path)


def fig_heat(report, path):
    """On-diagonal decay and its time derivative with fitted slopes."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    ts = np.asarray(report["times"])
    p = np.asarray(report["p_xx"]) - report["equilibrium"]
    dp = np.asarray(report["dp_xx"])
    for ax, series, fit, target, label in (
        (axes[0], p, report["fit"], report["slope_target"], "p_t(x,x) - floor"),
        (axes[1], dp, report["fit_dt"], report["dt_target"], "|d/dt p_t(x,x)|"),
    ):
        ax.loglog(ts, series, "o", ms=3)
        ax.loglog(ts, 10.0 ** (fit["intercept"] + fit["slope"] * np.log10(ts)), "--",
                  label="slope %.3f (target %.3f)" % (fit["slope"], target))
        ax.set_xlabel("t")
        ax.set_title(label)
        ax.legend(fontsize=8)
    return _finish(fig, path)


def fig_phase(report, path):
    """Phase diagram: verdict per (gamma, p) with the threshold curve."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    prof = ScalingProfile()
    gg = np.linspace(1.0 / prof.beta + 1e-3, 0.95, 300)
    pstar = np.array([prof.p_star(g) for g in gg])
    ok = np.isfinite(pstar) & (pstar < 10)
    ax.plot(gg[ok], pstar[ok], "-", color="k", lw=1.2, label="threshold p*(gamma)")
    colors = {"grows": "C3", "bounded": "C0", "inconclusive": "C7", "no-verdict": "C8"}
    seen = set()
    for pt in report["points"]:
        v = pt["verdict"]
        ax.plot(pt["gamma"], pt["p"], "o", color=colors.get(v, "C7"),
                label=v if v not in seen else None)
        seen.add(v)
    ax.set_xlabel("gamma")
    ax.set_ylabel("p")
    ax.set_ylim(0.9, 3.3)
    ax.legend(fontsize=8)
    ax.set_title("regularization vs gradient: measured phase behavior")
    return _finish(fig, path)


def fig_phase_series(report, path):
    """Ratio series per (gamma, p) across levels."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for pt in report["points"]:
        ax.semilogy(pt["levels"], pt["ratios"], "o-",
                    label="gamma=%.2f p=%.2f [%s]" % (pt["gamma"], pt["p"], pt["verdict"]))
    ax.set_xlabel("tent level n")
    ax.set_ylabel("ratio R_n")
    ax.legend(fontsize=7)
    ax.set_title("regularization/gradient ratio series")
    return _finish(fig, path)


def fig_cz(decomp_reports, path):
    """Covering geometry summary for a sweep of thresholds."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for rep in decomp_reports:
        if rep["trivial"]:
            continue
        radii = [b["radius"] for b in rep["per_ball"]]
        meas = [b["measure"] for b in rep["per_ball"]]
        axes[0].loglog(radii, meas, "o", ms=3, alpha=0.6,
                       label="lambda=%.3g (%d balls)" % (rep["lambda"], len(radii)))
    if axes[0].has_data():
        xs = np.logspace(-0.5, 1.6, 40)
        axes[0].loglog(xs, 4.0 * xs ** (np.log(5) / np.log(3)), "--",
                       color="k", lw=0.8, label="full-growth reference")
    axes[0].set_xlabel("ball radius")
    axes[0].set_ylabel("covered measure")
    axes[0].legend(fontsize=7)
    lams = [rep["lambda"] for rep in decomp_reports]
    sums = [rep.get("measure_sum_constant") for rep in decomp_reports]
    axes[1].plot(lams, [s if s is not None else np.nan for s in sums], "o-")
    axes[1].set_xscale("log")
    axes[1].set_xlabel("threshold lambda")
    axes[1].set_ylabel("sum m(B_i) lambda^q / energy")
    axes[1].set_title("covering efficiency")
    return _finish(fig, path)


def fig_annulus(report, path):
    """Scaled tail constants across fixture radii."""
    fig, ax = plt.subplots(figsize=(6, 4))
    rs = [row["r"] for row in report["rows"]]
    ax.semilogx(rs, [row["tail_constant"] for row in report["rows"]], "o-",
                label="tail constant (scaled)")
    ax.semilogx(rs, [row["smooth_constant"] for row in report["rows"]], "s-",
                label="smooth-part constant")
    ax.set_xlabel("fixture radius r")
    ax.set_ylabel("constant")
    ax.legend()
    ax.set_title("annulus decay of the split (gamma=%.2f, q=%.1f)"
                 % (report["gamma"], report["q"]))
    return _finish(fig, path)
