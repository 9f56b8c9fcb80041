"""Command-line surface: reproducible pipelines over the library modules.

Every subcommand writes a single JSON report object holding the full
effective configuration (defaults included) plus its key metrics, and
streams per-iteration diagnostics as JSON lines on stdout. Exit codes:
0 success, 2 unreadable/invalid inputs or arguments, 3 numeric failure
inside a module. The DCV_THREADS environment variable (integer >= 1) caps
internal parallelism; results never depend on its value.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio, synth
from .denoise import DenoiseConfig, SolverError, denoise, gst_grid_minimizer, gst_shrink
from .evolve import EvolveConfig, EvolveError, evolve
from .fileio import FileFormatError
from .mesh import (
    MeshError,
    add_gaussian_noise,
    apply_operator,
    build_edge_operator,
    quality_report,
)
from .prior import FitError, HyperLaplacianParams, estimate_sigma, fit_report
from .similarity import (
    ImageError,
    ScalarImage,
    bridge_identity_residual,
    detail_preserving_derivative,
    guided_filter,
    registration_approximation_residual,
    similarity_energy,
    window_stats,
    zncc_derivative,
)

_INPUT_ERRORS = (FileFormatError, MeshError, ImageError, OSError, ValueError)
_NUMERIC_ERRORS = (SolverError, FitError, EvolveError, FloatingPointError)


def worker_count() -> int:
    raw = os.environ.get("DCV_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"DCV_THREADS must be an integer >= 1, got {raw!r}")
    if n < 1:
        raise ValueError(f"DCV_THREADS must be >= 1, got {n}")
    return n


def _emit(line: dict) -> None:
    sys.stdout.write(json.dumps(line, sort_keys=True) + "\n")


def _write_report(path, payload: dict) -> None:
    if path:
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_image(path) -> ScalarImage:
    if str(path).endswith(".ppm"):
        return fileio.read_ppm(path)
    return fileio.read_pgm(path)


def _read_mesh(path):
    if str(path).endswith(".ply"):
        return fileio.read_ply(path)
    return fileio.read_obj(path)


def _write_mesh(path, mesh) -> None:
    if str(path).endswith(".ply"):
        fileio.write_ply(path, mesh)
    else:
        fileio.write_obj(path, mesh)


# ---------------------------------------------------------------- commands

def _cmd_synth(args) -> dict:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    info: dict = {}
    if args.kind in ("cube", "prism", "sphere"):
        maker = {"cube": synth.make_cube, "prism": synth.make_prism,
                 "sphere": synth.make_sphere}[args.kind]
        mesh, creases = maker(args.resolution)
        fileio.write_obj(out / f"{args.kind}.obj", mesh)
        (out / f"{args.kind}.creases.json").write_text(
            json.dumps({"crease_edges": creases.tolist()}) + "\n"
        )
        info.update(
            vertices=mesh.n_vertices, faces=mesh.n_faces, edges=mesh.n_edges,
            creases=int(len(creases)),
        )
        if args.noise > 0:
            noisy = add_gaussian_noise(mesh, args.noise, synth.derive_seed(args.seed, 2))
            fileio.write_obj(out / f"{args.kind}_noisy.obj", noisy)
    else:
        if args.kind == "plane-stereo":
            bundle = synth.make_plane_stereo(size=args.resolution, seed=args.seed)
        else:
            bundle = synth.make_step_stereo(size=args.resolution, seed=args.seed)
        fileio.write_pgm(out / "ref.pgm", bundle.reference)
        fileio.write_pgm(out / "aux.pgm", bundle.auxiliary)
        fileio.write_depth(out / "depth_true.f32", bundle.depth_true)
        fileio.write_cameras(out / "cams.json", bundle.cameras)
        info.update(width=args.resolution, height=args.resolution)
    return info


def _cmd_denoise(args, workers: int) -> dict:
    mesh = _read_mesh(args.input)
    fixed = None
    if args.fixed_p is not None:
        fixed = HyperLaplacianParams(
            p=args.fixed_p, theta=args.fixed_theta, sigma=args.fixed_sigma
        )
    config = DenoiseConfig(
        beta0=args.beta0, beta_growth=args.beta_growth, beta_max=args.beta_max,
        outer_iters=args.outer, inner_iters=args.inner, fixed_params=fixed,
        refit_each_outer=args.refit_each_outer, workers=workers,
    )
    result, params, diagnostics = denoise(mesh, config)
    for row in diagnostics:
        _emit(row)
    _write_mesh(args.output, result)
    info = {
        "p": params.p, "theta": params.theta, "sigma": params.sigma,
        "lambda": params.lam, "sweeps": len(diagnostics),
        "beta0": diagnostics[0]["beta"] if diagnostics else None,
        "beta_max": diagnostics[-1]["beta"] if diagnostics else None,
        "rmse_vs_input": diagnostics[-1]["rmse_vs_input"] if diagnostics else 0.0,
    }
    if args.reference:
        ref = _read_mesh(args.reference)
        creases = None
        if args.creases:
            creases = json.loads(Path(args.creases).read_text())["crease_edges"]
        rep = quality_report(result, ref, creases)
        info["vertex_rmse"] = rep.vertex_rmse
        info["mean_dihedral_error_deg"] = rep.mean_dihedral_error_deg
        info["max_deviation"] = rep.max_deviation
    return info


def _cmd_fit_prior(args, workers: int) -> dict:
    mesh = _read_mesh(args.input)
    op = build_edge_operator(mesh)
    mags = np.linalg.norm(apply_operator(op, mesh.vertices), axis=1)
    sigma = 0.0
    if args.reference:
        ref = _read_mesh(args.reference)
        if ref.vertices.shape != mesh.vertices.shape:
            raise MeshError("reference mesh size differs")
        sigma = estimate_sigma(mesh.vertices, ref.vertices)
    return fit_report(mags, mesh.n_edges, sigma=sigma, workers=workers)


def _cmd_gst_check(args) -> dict:
    rng = np.random.default_rng(args.seed)
    p_choices = np.array([0.2, 0.5, 0.75, 1.0])
    max_err = 0.0
    for _ in range(args.cases):
        d = rng.uniform(0.0, 10.0)
        tau = rng.uniform(0.0, 5.0)
        p = float(rng.choice(p_choices))
        got = gst_shrink(d, tau, p)
        ref = gst_grid_minimizer(d, tau, p)
        max_err = max(max_err, abs(got - ref))
    return {"cases": args.cases, "max_abs_error": max_err}


def _cmd_zncc_grad(args) -> dict:
    ref = _read_image(args.ref)
    aux = _read_image(args.aux)
    stats = window_stats(ref, aux, args.sigma_w, args.eps)
    if args.kappa > 0:
        deriv = detail_preserving_derivative(ref, aux, stats, args.kappa)
    else:
        deriv = zncc_derivative(ref, aux, stats)
    if args.out:
        fileio.write_float_dump(args.out, deriv.d2m)
    # central-difference probe of the registration energy at a few pixels
    # (only meaningful at kappa = 0, where d2m is the exact energy gradient)
    rng = np.random.default_rng(args.seed)
    h_step = 1e-4
    interior = np.argwhere(deriv.mask)
    picks = interior[rng.choice(len(interior), min(args.probes, len(interior)),
                                replace=False)]
    errs = []
    if args.kappa == 0:
        for y, x in picks:
            fd_vals = []
            for sign in (+1, -1):
                bumped = aux.data.copy()
                bumped[y, x] += sign * h_step
                fd_vals.append(
                    similarity_energy(ref, ScalarImage(bumped, aux.valid_mask),
                                      args.sigma_w, args.eps)
                )
            fd = (fd_vals[0] - fd_vals[1]) / (2 * h_step)
            errs.append(abs(deriv.d2m[y, x] - fd) / max(abs(fd), 1e-12))
    return {
        "max_abs_d2m": float(np.max(np.abs(deriv.d2m))),
        "fd_probe_count": len(errs),
        "fd_max_rel_error": max(errs) if errs else None,
    }


def _cmd_guided_filter(args) -> dict:
    img = _read_image(args.input)
    guide = _read_image(args.guide)
    out = guided_filter(img, guide, args.sigma_w, args.eps)
    fileio.write_pgm(args.output, out)
    if args.dump:
        fileio.write_float_dump(args.dump, out.data)
    return {"min": float(out.data.min()), "max": float(out.data.max())}


def _cmd_bridge_check(args) -> dict:
    if args.ref and args.aux:
        ref = _read_image(args.ref)
        aux = _read_image(args.aux)
    else:
        ref = synth.texture_image(args.size, args.size, 4.0, synth.derive_seed(args.seed, 0))
        aux = synth.texture_image(args.size, args.size, 4.0, synth.derive_seed(args.seed, 1))
    exact = bridge_identity_residual(ref, aux, args.sigma_w, args.eps)
    approx = registration_approximation_residual(ref, aux, args.sigma_w, args.eps)
    return {"exact_identity_residual": exact, "approximation_residual": approx}


def _cmd_evolve(args, workers: int) -> dict:
    ref = _read_image(args.ref)
    if len(args.aux) != len(args.cams):
        raise ValueError("need one --cams file per --aux view")
    aux = [_read_image(p) for p in args.aux]
    cams = [fileio.read_cameras(p) for p in args.cams]
    depth0 = fileio.read_depth(args.depth)
    reg_cfg = DenoiseConfig(
        outer_iters=1, inner_iters=1, beta_growth=4.0, beta_span=10.0,
        workers=workers,
    )
    config = EvolveConfig(
        eta=args.eta, levels=args.levels, iters_per_level=args.iters,
        kappa0=args.kappa, regularizer=args.regularizer, reg_config=reg_cfg,
        sigma_w=args.sigma_w, eps=args.eps,
    )
    refined, diagnostics = evolve(ref, aux, depth0, cams, config)
    for row in diagnostics:
        _emit(row)
    fileio.write_depth(args.output, refined)
    info = {
        "iterations": len(diagnostics),
        "final_energy": diagnostics[-1]["energy"] if diagnostics else 0.0,
    }
    if args.depth_true:
        truth = fileio.read_depth(args.depth_true)
        info["depth_rmse"] = float(
            np.sqrt(np.mean((refined.depth - truth.depth) ** 2))
        )
    return info


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpstereo",
        description="Detail-preserving stereo refinement and Lp mesh denoising",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic meshes or stereo bundles")
    p.add_argument("--kind", required=True,
                   choices=["cube", "prism", "sphere", "plane-stereo", "step-stereo"])
    p.add_argument("--resolution", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--report")

    p = sub.add_parser("denoise", help="content-aware Lp mesh denoising")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--report")
    p.add_argument("--reference")
    p.add_argument("--creases")
    p.add_argument("--beta0", type=float)
    p.add_argument("--beta-growth", type=float, default=2.0)
    p.add_argument("--beta-max", type=float)
    p.add_argument("--outer", type=int, default=3)
    p.add_argument("--inner", type=int, default=4)
    p.add_argument("--refit-each-outer", action="store_true",
                   help="refit (theta, p) every outer iteration instead of "
                        "freezing the shape after the first fit")
    p.add_argument("--fixed-p", type=float)
    p.add_argument("--fixed-theta", type=float, default=1.0)
    p.add_argument("--fixed-sigma", type=float, default=0.0)

    p = sub.add_parser("fit-prior", help="fit hyper-Laplacian shape parameters")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--reference")
    p.add_argument("--report")

    p = sub.add_parser("gst-check", help="GST shrinkage vs the grid oracle")
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--report")

    p = sub.add_parser("zncc-grad", help="similarity derivative field")
    p.add_argument("--ref", required=True)
    p.add_argument("--aux", required=True)
    p.add_argument("--out")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--sigma-w", type=float, default=1.5)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--probes", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")

    p = sub.add_parser("guided-filter", help="guided image filtering")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--dump")
    p.add_argument("--sigma-w", type=float, default=1.5)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--report")

    p = sub.add_parser("bridge-check", help="derivative/guided-filter identity check")
    p.add_argument("--ref")
    p.add_argument("--aux")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-w", type=float, default=1.5)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--report")

    p = sub.add_parser("evolve", help="depth-map surface evolution")
    p.add_argument("--ref", required=True)
    p.add_argument("--aux", required=True, action="append",
                   help="auxiliary view; repeat with matching --cams to sum "
                        "gradients over several views")
    p.add_argument("--depth", required=True)
    p.add_argument("--cams", required=True, action="append")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--depth-true")
    p.add_argument("--eta", type=float)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--iters", type=int, default=60)
    p.add_argument("--kappa", type=float, default=0.05)
    p.add_argument("--regularizer", default="content_aware_lp",
                   choices=["content_aware_lp", "isotropic", "none"])
    p.add_argument("--sigma-w", type=float, default=1.5)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--report")

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        workers = worker_count()
        handlers = {
            "synth": lambda: _cmd_synth(args),
            "denoise": lambda: _cmd_denoise(args, workers),
            "fit-prior": lambda: _cmd_fit_prior(args, workers),
            "gst-check": lambda: _cmd_gst_check(args),
            "zncc-grad": lambda: _cmd_zncc_grad(args),
            "guided-filter": lambda: _cmd_guided_filter(args),
            "bridge-check": lambda: _cmd_bridge_check(args),
            "evolve": lambda: _cmd_evolve(args, workers),
        }
        metrics = handlers[args.command]()
    except _NUMERIC_ERRORS as exc:
        sys.stderr.write(json.dumps(
            {"error": "numeric", "command": args.command, "detail": str(exc)}
        ) + "\n")
        return 3
    except _INPUT_ERRORS as exc:
        sys.stderr.write(json.dumps(
            {"error": "input", "command": args.command, "detail": str(exc)}
        ) + "\n")
        return 2
    # full effective configuration, defaults included (None = resolved downstream,
    # with the resolved value reported in metrics)
    config = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    payload = {
        "command": args.command,
        "config": config,
        "dcv_threads": workers,
        "metrics": metrics,
    }
    report_path = getattr(args, "report", None)
    _write_report(report_path, payload)
    _emit({"summary": payload})
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
