"""Configuration-driven runner: solve, scaling study, and Mie oracle.

Configs are JSON with a fixed schema (unknown keys are rejected so
typos fail loudly). Reports are JSON with one stable layout; solution
artifacts (RCS cuts, surface currents) are plain text per the formats
in postprocess.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import geometry as geo
from . import postprocess as post
from .errors import CapExceeded, ChebscatError, ConfigError
from .kernels import (MFIE_PEC, MULLER, Dipole, FormulationSpec, Medium,
                      PlaneWave)
from .mie import MieSpec, find_resonance, mie_rcs
from .solver import Problem, SolveResult, solve_dense, solve_direct, solve_gmres

log = logging.getLogger("chebscat")

_SCHEMA = {
    "geometry": {"kind", "radius", "refinement", "order", "path"},
    "media": {"outer", "inner"},
    "excitation": {"kind", "direction", "polarization", "amplitude",
                   "position", "moment"},
    "tolerances": {"aca_tol", "trunc_tol", "gmres_tol"},
    "structure": {"eta", "n_leaf", "near_factor", "grading", "oversample"},
    "gmres": {"restart", "max_iters"},
    "outputs": {"rcs", "current_path", "report_path"},
    "rcs": {"phi_deg", "theta_start", "theta_stop", "theta_num", "path"},
    "medium": {"eps_r", "mu_r"},
}
_TOP_KEYS = {"geometry", "formulation", "media", "excitation", "wavelength",
             "solver", "tolerances", "structure", "gmres", "outputs",
             "study_sizes", "dense_cap", "workers"}


def _check_keys(d: dict, allowed: set, where: str):
    for key in d:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def load_config(path) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _check_keys(cfg, _TOP_KEYS, "config")
    for section in ("geometry", "media", "excitation", "tolerances",
                    "structure", "gmres", "outputs"):
        if section in cfg:
            _check_keys(cfg[section], _SCHEMA.get(section, set()), section)
    if "media" in cfg:
        for side in cfg["media"]:
            _check_keys(cfg["media"][side], _SCHEMA["medium"], f"media.{side}")
    if "outputs" in cfg and isinstance(cfg["outputs"].get("rcs"), dict):
        _check_keys(cfg["outputs"]["rcs"], _SCHEMA["rcs"], "outputs.rcs")
    for req in ("geometry", "formulation", "wavelength"):
        if req not in cfg:
            raise ConfigError(f"missing required key {req!r}")
    return cfg


def _build_patches(gcfg: dict):
    kind = gcfg.get("kind")
    if kind == "sphere":
        order = gcfg.get("order", [6, 6])
        patches = geo.unit_sphere_patches(float(gcfg["radius"]),
                                          int(gcfg.get("refinement", 0)),
                                          (int(order[0]), int(order[1])))
        return patches, float(gcfg["radius"])
    if kind == "mesh":
        return geo.load_patch_mesh(gcfg["path"]), None
    raise ConfigError(f"geometry.kind must be 'sphere' or 'mesh', got {kind!r}")


def build_problem(cfg: dict) -> tuple[Problem, float | None]:
    """Problem plus the sphere radius when the geometry is the builtin."""
    lam = float(cfg["wavelength"])
    media = cfg.get("media", {"outer": {"eps_r": 1.0, "mu_r": 1.0}})
    outer_cfg = media.get("outer", {"eps_r": 1.0, "mu_r": 1.0})
    outer = Medium.from_relative(outer_cfg.get("eps_r", 1.0),
                                 outer_cfg.get("mu_r", 1.0), lam)
    form = cfg["formulation"]
    if form == MFIE_PEC:
        spec = FormulationSpec(MFIE_PEC, outer)
    elif form == MULLER:
        if "inner" not in media:
            raise ConfigError("media.inner is required for the muller formulation")
        inner_cfg = media["inner"]
        inner = Medium.from_relative(inner_cfg.get("eps_r", 1.0),
                                     inner_cfg.get("mu_r", 1.0), lam)
        spec = FormulationSpec(MULLER, outer, inner)
    else:
        raise ConfigError(f"formulation must be 'mfie_pec' or 'muller', got {form!r}")
    exc_cfg = cfg.get("excitation", {"kind": "plane_wave",
                                     "direction": [0, 0, 1],
                                     "polarization": [1, 0, 0]})
    if exc_cfg.get("kind", "plane_wave") == "plane_wave":
        exc = PlaneWave(exc_cfg.get("direction", [0, 0, 1]),
                        exc_cfg.get("polarization", [1, 0, 0]),
                        float(exc_cfg.get("amplitude", 1.0)))
    elif exc_cfg["kind"] == "dipole":
        exc = Dipole(exc_cfg["position"], exc_cfg["moment"])
    else:
        raise ConfigError(f"excitation.kind {exc_cfg.get('kind')!r} unknown")
    patches, radius = _build_patches(cfg["geometry"])
    tol = cfg.get("tolerances", {})
    struct = cfg.get("structure", {})
    gm = cfg.get("gmres", {})
    workers = cfg.get("workers")
    problem = Problem(
        patches, spec, exc,
        aca_tol=float(tol.get("aca_tol", 1e-4)),
        trunc_tol=(None if tol.get("trunc_tol") is None
                   else float(tol["trunc_tol"])),
        gmres_tol=float(tol.get("gmres_tol", 1e-4)),
        eta=float(struct.get("eta", 2.0)),
        n_leaf=int(struct.get("n_leaf", 64)),
        tau=float(struct.get("near_factor", 1.0)),
        grading=int(struct.get("grading", 3)),
        oversample=(None if struct.get("oversample") is None
                    else int(struct["oversample"])),
        dense_cap=int(cfg.get("dense_cap", 20000)),
        workers=int(workers) if workers else (os.cpu_count() or 1),
        gmres_restart=int(gm.get("restart", 200)),
        gmres_max_iters=int(gm.get("max_iters", 2000)),
    )
    return problem, radius


def _run_solver(problem: Problem, solver: str) -> SolveResult:
    if solver == "direct":
        return solve_direct(problem)
    if solver == "dense":
        return solve_dense(problem)
    if solver == "gmres":
        return solve_gmres(problem)
    raise ConfigError(f"solver must be direct|dense|gmres, got {solver!r}")


def run(config_path, workers: int | None = None) -> dict:
    """Execute one solve per the config; write artifacts and the report."""
    cfg = load_config(config_path)
    if workers is not None:
        cfg["workers"] = workers
    problem, radius = build_problem(cfg)
    solver = cfg.get("solver", "direct")
    log.info("solving N=%d with %s", problem.n_dofs, solver)
    t0 = time.perf_counter()
    result = _run_solver(problem, solver)
    total = time.perf_counter() - t0
    report = {
        "config": cfg,
        "n_dofs": problem.n_dofs,
        "wavelength": problem.wavelength,
        "solver": solver,
        "timings_s": {k: v for k, v in result.metrics.items()
                      if k.endswith("_s")},
        "total_s": total,
        "residual": result.residual,
        "iterations": result.iterations,
        "converged": result.converged,
        "metrics": {k: v for k, v in result.metrics.items()
                    if not k.endswith("_s") and k != "hmatrix_diagnostics"},
    }
    if "hmatrix_diagnostics" in result.metrics:
        report["hmatrix_diagnostics"] = result.metrics["hmatrix_diagnostics"]
    if radius is not None and isinstance(problem.excitation, PlaneWave):
        report["mie_errors"] = post.mie_comparison(problem, result.solution,
                                                   radius)
    outputs = cfg.get("outputs", {})
    if isinstance(outputs.get("rcs"), dict):
        rc = outputs["rcs"]
        theta = np.linspace(float(rc.get("theta_start", 0.0)),
                            float(rc.get("theta_stop", 180.0)),
                            int(rc.get("theta_num", 181)))
        cut = post.rcs_cut(problem, result.solution,
                           float(rc.get("phi_deg", 0.0)), theta)
        path = rc.get("path", "rcs.txt")
        post.export_rcs(cut, path)
        report["rcs_file"] = path
        if radius is not None:
            mie_spec = MieSpec(radius, problem.spec.outer,
                               problem.spec.inner if problem.spec.kind == MULLER
                               else None,
                               amplitude=problem.excitation.amplitude)
            sig = np.atleast_1d(mie_rcs(mie_spec, theta,
                                        float(rc.get("phi_deg", 0.0))))
            report.setdefault("mie_errors", {})["rcs_l2"] = float(
                np.linalg.norm(cut.sigma_m2 - sig) / np.linalg.norm(sig))
    if outputs.get("current_path"):
        post.export_surface_current(problem, result.solution,
                                    outputs["current_path"])
        report["current_file"] = outputs["current_path"]
    report_path = outputs.get("report_path")
    if report_path:
        with open(report_path, "w") as f:
            json.dump(report, f, indent=1, sort_keys=True)
        log.info("report written to %s", report_path)
    return report


def _fit_exponent(sizes, values):
    keep = [(n, v) for n, v in zip(sizes, values) if v and v > 0]
    if len(keep) < 2:
        return None
    xs = np.log([n for n, _ in keep])
    ys = np.log([v for _, v in keep])
    return float(np.polyfit(xs, ys, 1)[0])


def scaling_study(config_path, workers: int | None = None) -> dict:
    """One run per study size plus log-log exponent fits."""
    cfg = load_config(config_path)
    if workers is not None:
        cfg["workers"] = workers
    sizes = cfg.get("study_sizes")
    if not sizes or len(sizes) < 3:
        raise ConfigError("study_sizes must list at least 3 sizes")
    solver = cfg.get("solver", "direct")
    rows = []
    for size in sizes:
        sub = json.loads(json.dumps(cfg))
        sub.pop("study_sizes")
        sub["geometry"].update(size)
        sub.setdefault("outputs", {}).pop("rcs", None)
        sub["outputs"].pop("current_path", None)
        sub["outputs"].pop("report_path", None)
        problem, _ = build_problem(sub)
        n = problem.n_dofs
        row = {"n_dofs": n, "size": size}
        if solver == "dense":
            row["memory_bytes"] = 16 * n * n    # logical dense storage
            if n > problem.dense_cap:
                row["skipped"] = f"N={n} exceeds dense cap {problem.dense_cap}"
                rows.append(row)
                continue
        try:
            result = _run_solver(problem, solver)
        except ChebscatError as e:
            row["error"] = f"{type(e).__name__}: {e}"
            rows.append(row)
            continue
        row.update({k: v for k, v in result.metrics.items()
                    if k.endswith("_s")})
        if solver != "dense":
            row["memory_bytes"] = result.metrics.get("hmatrix_bytes")
            row["compression_rate"] = result.metrics.get("compression_rate")
        row["residual"] = result.residual
        rows.append(row)
    ns = [r["n_dofs"] for r in rows]
    report = {
        "config": cfg,
        "solver": solver,
        "rows": rows,
        "memory_exponent": _fit_exponent(ns, [r.get("memory_bytes") for r in rows]),
        "fill_exponent": _fit_exponent(ns, [r.get("fill_s") for r in rows]),
        "factor_exponent": _fit_exponent(ns, [r.get("factor_s") for r in rows]),
    }
    report_path = cfg.get("outputs", {}).get("report_path")
    if report_path:
        with open(report_path, "w") as f:
            json.dump(report, f, indent=1, sort_keys=True)
    return report


def _mie_command(args) -> int:
    outer = Medium.from_relative(args.eps_outer, 1.0, args.wavelength)
    inner = None if args.pec else Medium.from_relative(args.eps_r, args.mu_r,
                                                       args.wavelength)
    spec = MieSpec(args.radius, outer, inner, amplitude=args.amplitude)
    if args.resonance_interval:
        lo, hi = args.resonance_interval
        eps = find_resonance(spec, (lo, hi))
        print(f"resonance eps_r = {eps:.6f}")
        return 0
    theta = np.linspace(args.theta[0], args.theta[1], int(args.theta[2]))
    sigma = np.atleast_1d(mie_rcs(spec, theta, args.phi))
    lines = ["# theta_deg sigma_m2 sigma_dbsm"]
    for t, s in zip(theta, sigma):
        db = 10.0 * np.log10(max(s, 1e-300))
        lines.append(f"{t:.6f} {s:.9e} {db:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chebscat",
        description="High-order surface-integral EM scattering solver "
                    "with an H-matrix direct engine")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker threads for parallel stages")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_solve = sub.add_parser("solve", help="run one scattering solve")
    p_solve.add_argument("config")
    p_study = sub.add_parser("study", help="scaling study over study_sizes")
    p_study.add_argument("config")
    p_mie = sub.add_parser("mie", help="standalone sphere-series oracle")
    p_mie.add_argument("--radius", type=float, required=True)
    p_mie.add_argument("--wavelength", type=float, default=1.0)
    p_mie.add_argument("--eps-r", type=float, default=1.0,
                       help="interior relative permittivity")
    p_mie.add_argument("--mu-r", type=float, default=1.0)
    p_mie.add_argument("--eps-outer", type=float, default=1.0)
    p_mie.add_argument("--pec", action="store_true")
    p_mie.add_argument("--amplitude", type=float, default=1.0)
    p_mie.add_argument("--phi", type=float, default=0.0)
    p_mie.add_argument("--theta", type=float, nargs=3,
                       default=[0.0, 180.0, 181],
                       metavar=("START", "STOP", "NUM"))
    p_mie.add_argument("--resonance-interval", type=float, nargs=2,
                       default=None, metavar=("LO", "HI"))
    p_mie.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mie":
            return _mie_command(args)
        if args.command == "solve":
            report = run(args.config, workers=args.workers)
        else:
            report = scaling_study(args.config, workers=args.workers)
        if not report.get("config", {}).get("outputs", {}).get("report_path"):
            json.dump(report, sys.stdout, indent=1, sort_keys=True)
            sys.stdout.write("\n")
        return 0
    except ChebscatError as e:
        error = {"error": type(e).__name__, "message": str(e)}
        json.dump(error, sys.stderr, indent=1)
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
