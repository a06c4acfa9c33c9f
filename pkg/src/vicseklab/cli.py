"""Command-line driver for the laboratory.

Each subcommand resolves one configuration (defaults < profile < ``VF_``
environment variables < ``--config`` file < ``--set`` assignments), runs
the corresponding experiments and writes its artifacts under
``--out/<command>/``: a JSON report with the resolved configuration
embedded verbatim, flat CSV tables ('.' decimal point, ',' separator,
fixed header row), plot-ready ``.dat`` series, and matplotlib figures
unless ``--no-figures`` is given.  Reruns with the same configuration
produce byte-identical artifacts except for the timestamp field in
``run_summary.json``.

Subcommands::

    build     geometry and mesh census of the configured system
    spectrum  eigenvalue table plus scalar multiplier bounds
    poincare  mean-deviation constants across truncation levels
    phase     growth/boundedness scan over (gamma, p)
    cz        threshold sweeps of the stopping-time decomposition
    heat      on-diagonal heat decay and mass conservation
    all       the numbered acceptance suite

Exit codes: 0 success, 1 acceptance failure, 2 usage or configuration
error, 3 resource exhaustion.
"""

import argparse
import datetime
import json
import os
import sys

import numpy as np

from .acceptance import run_checks
from .config import PROFILES, ConfigError, config_hash, load_config
from .experiments import (
    Lab,
    cz_sweep,
    gradient_isometry,
    heat_decay,
    heat_retention,
    phase_scan,
    poincare_empirical,
    poincare_report,
)
from .reporting import ensure_dir, write_csv, write_dat, write_json
from .spectral import scalar_rr2_check


def _emit(out, stem, report, cfg):
    """Main JSON artifact of a subcommand, with the config embedded."""
    path = os.path.join(out, stem + ".json")
    return write_json(path, report, config_hash(cfg), config=cfg)


def _figure(cfg, render, *args):
    if cfg["figures"]:
        render(*args)


# -- subcommands ------------------------------------------------------------


def cmd_build(lab, cfg, out):
    """Geometry census and mesh summary of the configured system."""
    level = cfg["system"]["level"]
    M = cfg["system"]["mesh_m"]
    X = lab.system(level)
    mesh = lab.mesh(level, M)
    h = config_hash(cfg)

    rows = [
        (k, X.skeleton_count(k), 4 * 5 ** k, 2 * 3 ** k)
        for k in range(level + 1)
    ]
    report = {
        "name": "build",
        "N": X.N,
        "level": level,
        "mesh_m": M,
        "vertices": len(X.vertices),
        "cables": len(X.cables),
        "total_length": float(len(X.cables)),
        "mesh_nodes": mesh.n_nodes,
        "mesh_edges": mesh.n_nodes - 1,
        "levels": [
            {"level": k, "copies": c, "measure": m, "diameter": d}
            for k, c, m, d in rows
        ],
    }
    _emit(out, "build", report, cfg)
    write_json(os.path.join(out, "system.json"), X.to_json(), h)
    write_csv(
        os.path.join(out, "levels.csv"),
        ("level", "copies", "measure", "diameter"),
        rows,
        h,
    )
    if cfg["figures"]:
        from .figures import fig_system

        fig_system(X, mesh, os.path.join(out, "system.png"))
    print(
        "system: N=%d level=%d, %d vertices, %d cables; mesh M=%d, %d nodes"
        % (X.N, level, len(X.vertices), len(X.cables), M, mesh.n_nodes)
    )
    return 0


def cmd_spectrum(lab, cfg, out):
    """Eigenvalue table, gradient isometry and scalar multiplier bounds."""
    sc = cfg["spectrum"]
    basis = lab.basis(sc["level"], sc["mesh_m"])
    lam = basis.lam
    pos = lam[lam > 1e-12]
    h = config_hash(cfg)

    scalars = [scalar_rr2_check(eps) for eps in cfg["eps_grid"]]
    iso = gradient_isometry(
        lab, sc["level"], sc["mesh_m"], n_samples=20, seed=cfg["seed"] + 1
    )
    report = {
        "name": "spectrum",
        "level": sc["level"],
        "M": sc["mesh_m"],
        "n_modes": basis.k,
        "complete": basis.complete,
        "n_zero_modes": int((lam <= 1e-12).sum()),
        "lam_min_positive": float(pos.min()),
        "lam_max": float(lam.max()),
        "gradient_isometry": iso,
        "scalar_bounds": scalars,
    }
    _emit(out, "spectrum", report, cfg)
    write_csv(
        os.path.join(out, "scalar_bounds.csv"),
        ("eps", "sup_grid", "sup_closed", "bounded"),
        [(s["eps"], s["sup_grid"], s["sup_closed"], s["bounded"]) for s in scalars],
        h,
    )
    write_dat(
        os.path.join(out, "eigenvalues.dat"),
        np.arange(basis.k),
        lam,
        h,
        label="index lambda",
    )
    if cfg["figures"]:
        from .figures import fig_spectrum

        fig_spectrum(lam, os.path.join(out, "spectrum.png"))
    print(
        "spectrum: %d modes on %d nodes (complete=%s), lambda in [%.4g, %.4g]"
        % (basis.k, basis.n, basis.complete, pos.min(), lam.max())
    )
    return 0


def cmd_poincare(lab, cfg, out):
    """Mean-deviation constants per level, spectral and empirical."""
    pc = cfg["poincare"]
    rep = poincare_report(lab, pc["n_max"], M=pc["mesh_m"])
    emp = [
        poincare_empirical(lab, n, q, M=pc["mesh_m"], seed=cfg["seed"] + 41)
        for n in rep["levels"]
        for q in pc["q_extra"]
    ]
    _emit(out, "poincare", {"spectral": rep, "empirical": emp}, cfg)

    rows = []
    for i, n in enumerate(rep["levels"]):
        rows.append(
            (
                n,
                rep["constant_full"][i],
                rep["constant_diag"][i],
                rep["dlog_full"][i - 1] if i else None,
                rep["dlog_diag"][i - 1] if i else None,
            )
        )
    write_csv(
        os.path.join(out, "constants.csv"),
        ("level", "constant_full", "constant_diag", "dlog_full", "dlog_diag"),
        rows,
        config_hash(cfg),
    )
    if cfg["figures"]:
        from .figures import fig_poincare

        fig_poincare(rep, os.path.join(out, "poincare.png"))
    print(
        "poincare: dlog_full=%s (target %.4f), dlog_diag=%s (target %.4f)"
        % (
            ["%.4f" % d for d in rep["dlog_full"]],
            rep["target_dlog_full"],
            ["%.4f" % d for d in rep["dlog_diag"]],
            rep["target_dlog_diag"],
        )
    )
    return 0


def cmd_phase(lab, cfg, out):
    """Growth/boundedness verdict per (gamma, p) pair."""
    ph = cfg["phase"]
    rep = phase_scan(
        lab,
        ph["gammas"],
        ph["ps"],
        levels=tuple(ph["levels"]),
        workers=cfg["workers"],
        grow_at=ph["grow_at"],
        flat_at=ph["flat_at"],
    )
    _emit(out, "phase", rep, cfg)

    rows = [
        (
            pt["gamma"],
            pt["p"],
            n,
            r,
            pt["p_star"],
            pt["growth_factor"],
            pt["expected_factor"],
            pt["verdict"],
        )
        for pt in rep["points"]
        for n, r in zip(pt["levels"], pt["ratios"])
    ]
    write_csv(
        os.path.join(out, "phase.csv"),
        ("gamma", "p", "n", "ratio", "p_star", "growth_factor",
         "expected_factor", "verdict"),
        rows,
        config_hash(cfg),
    )
    if cfg["figures"]:
        from .figures import fig_phase, fig_phase_series

        fig_phase(rep, os.path.join(out, "phase.png"))
        fig_phase_series(rep, os.path.join(out, "phase_series.png"))
    for pt in rep["points"]:
        print(
            "phase: gamma=%.3f p=%.3f factor=%.3f expected=%.3f -> %s"
            % (pt["gamma"], pt["p"], pt["growth_factor"],
               pt["expected_factor"], pt["verdict"])
        )
    return 0


def cmd_cz(lab, cfg, out):
    """Threshold sweeps of the stopping-time decomposition per fixture."""
    cz = cfg["cz"]
    h = config_hash(cfg)
    rows = []
    for name in cz["fixtures"]:
        sweep = cz_sweep(
            lab,
            name,
            cz["level"],
            cz["mesh_m"],
            q=cz["q"],
            n_lambdas=cz["n_lambdas"],
            seed=cfg["seed"],
        )
        _emit(out, "cz_%s" % name, sweep, cfg)
        if cfg["figures"]:
            from .figures import fig_cz

            fig_cz(sweep["reports"], os.path.join(out, "cz_%s.png" % name))
        worst = 0.0
        for rep in sweep["reports"]:
            rows.append(
                (
                    name,
                    rep["lambda"],
                    rep["trivial"],
                    rep.get("covering_n_balls"),
                    rep.get("reconstruction_err"),
                    rep.get("overlap_N"),
                    rep.get("b_mass_constant"),
                    rep.get("b_energy_constant"),
                    rep.get("energy_density_constant"),
                    rep.get("measure_sum_constant"),
                )
            )
            if not rep["trivial"]:
                worst = max(worst, rep["reconstruction_err"])
        print(
            "cz %s: %d thresholds, worst reconstruction error %.3e"
            % (name, len(sweep["reports"]), worst)
        )
    write_csv(
        os.path.join(out, "cz.csv"),
        ("fixture", "lambda", "trivial", "n_balls", "reconstruction_err",
         "overlap_N", "b_mass", "b_energy", "energy_density", "measure_sum"),
        rows,
        h,
    )
    return 0


def cmd_heat(lab, cfg, out):
    """On-diagonal decay, derivative decay and short-time retention."""
    hc = cfg["heat"]
    rep = heat_decay(lab, hc["level"], hc["mesh_m"], hc["n_times"])
    ret = heat_retention(lab, scale=hc["retention_scale"])
    _emit(out, "heat", {"decay": rep, "retention": ret}, cfg)

    h = config_hash(cfg)
    write_csv(
        os.path.join(out, "heat.csv"),
        ("t", "p_xx", "dp_xx"),
        list(zip(rep["times"], rep["p_xx"], rep["dp_xx"])),
        h,
    )
    write_dat(
        os.path.join(out, "decay.dat"),
        rep["times"],
        np.asarray(rep["p_xx"]) - rep["equilibrium"],
        h,
        label="t p_xx_minus_equilibrium",
    )
    if cfg["figures"]:
        from .figures import fig_heat

        fig_heat(rep, os.path.join(out, "heat.png"))
    print(
        "heat: slope %.4f (target %.4f), dt slope %.4f (target %.4f), "
        "mass drift %.2e"
        % (rep["slope"], rep["slope_target"], rep["dt_slope"],
           rep["dt_target"], rep["mass_drift"])
    )
    return 0


def cmd_all(lab, cfg, out):
    """Run the acceptance suite and write its per-check artifacts."""
    h = config_hash(cfg)

    def progress(res):
        print("%-16s %s  (%.1fs)" % (res.cid, "PASS" if res.passed else "FAIL",
                                     res.elapsed))
        sys.stdout.flush()

    results = run_checks(lab, cfg, progress=progress)

    for res in results:
        write_json(
            os.path.join(out, "check_%s.json" % res.cid),
            {
                "cid": res.cid,
                "title": res.title,
                "passed": res.passed,
                "details": res.details,
            },
            h,
        )
    write_csv(
        os.path.join(out, "criteria.csv"),
        ("check", "title", "passed"),
        [(r.cid, r.title, r.passed) for r in results],
        h,
    )
    summary = {
        "profile": cfg["profile"],
        "n_checks": len(results),
        "n_passed": sum(1 for r in results if r.passed),
        "all_passed": all(r.passed for r in results),
        "checks": [
            {"cid": r.cid, "title": r.title, "passed": r.passed}
            for r in results
        ],
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(
            timespec="seconds"
        ),
        "timings": {
            r.cid: {
                "elapsed": round(r.elapsed, 3),
                "budget": r.budget,
                "clock": {k: round(v, 3) for k, v in r.clock.items()},
            }
            for r in results
        },
    }
    write_json(os.path.join(out, "run_summary.json"), summary, h, config=cfg)
    print(
        "acceptance: %d/%d checks passed"
        % (summary["n_passed"], summary["n_checks"])
    )
    return 0 if summary["all_passed"] else 1


_COMMANDS = (
    ("build", cmd_build, "geometry and mesh census of the configured system"),
    ("spectrum", cmd_spectrum, "eigenvalue table and scalar multiplier bounds"),
    ("poincare", cmd_poincare, "mean-deviation constants across levels"),
    ("phase", cmd_phase, "growth/boundedness scan over (gamma, p)"),
    ("cz", cmd_cz, "threshold sweeps of the stopping-time decomposition"),
    ("heat", cmd_heat, "heat kernel decay and mass conservation"),
    ("all", cmd_all, "run the numbered acceptance suite"),
)


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON configuration file")
    common.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override one dotted config key (repeatable)")
    common.add_argument("--out", default="out", metavar="DIR",
                        help="artifact directory (default: ./out)")
    common.add_argument("--workers", type=int, metavar="K",
                        help="worker threads for grid scans")
    common.add_argument("--seed", type=int, metavar="S",
                        help="master random seed")
    common.add_argument("--profile", choices=sorted(PROFILES),
                        help="size profile")
    common.add_argument("--no-figures", action="store_true",
                        help="skip matplotlib figure artifacts")

    ap = argparse.ArgumentParser(
        prog="vicseklab",
        description="numerical laboratory for the Vicsek cable system",
    )
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for name, _, help_text in _COMMANDS:
        sub.add_parser(name, parents=[common], help=help_text,
                       description=help_text)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    sets = list(args.set)
    if args.workers is not None:
        sets.append("workers=%d" % args.workers)
    if args.seed is not None:
        sets.append("seed=%d" % args.seed)
    if args.no_figures:
        sets.append("figures=false")
    try:
        cfg = load_config(file=args.config, sets=sets, profile=args.profile)
    except ConfigError as exc:
        print("vicseklab: configuration error: %s" % exc, file=sys.stderr)
        return 2

    out = ensure_dir(os.path.join(args.out, args.command))
    # the resolved configuration, reusable directly via --config
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=1)
        fh.write("\n")

    handler = {name: fn for name, fn, _ in _COMMANDS}[args.command]
    try:
        return handler(Lab(), cfg, out)
    except MemoryError:
        print("vicseklab: out of memory", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
