"""Command-line entry point: ``ncycle {info,metric,compress,decay,match,gen}``.

Every run prints its resolved configuration (including the seed) as one JSON
line before any result.  Exit status 2 means invalid input, 3 a numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .compression import RlsConfig, compress, decay_csv, decay_curve
from .geometry import (
    SHAPE_KINDS,
    MeshError,
    Polyline,
    TriangleMesh,
    boundary_vertices,
    build_edge_table,
    load_shape,
    make_shape,
    save_obj,
    save_polyline,
)
from .kernels import (
    GaussianKernel,
    currents_inner_direct,
    dual_distance_sq,
    dual_inner,
    nc_inner_theorem_curve,
    nc_inner_theorem_surface,
    set_threads,
)
from .registration import (
    DEFAULT_SIGMAS,
    MatchAborted,
    MatchProblem,
    ShootingConfig,
    grid_control_points,
    hausdorff_distance,
    match_report,
    optimize_match,
    parse_template_compression,
)
from .representations import DiracFunctional, currents_of_mesh, is_functional_file, normal_cycle

EXIT_INPUT = 2
EXIT_NUMERIC = 3
METHOD_NAMES = {"rls": "rls_recursive", "rls-exact": "rls_exact", "uniform": "uniform"}


class InputError(Exception):
    pass


def _fmt(x) -> str:
    return "%.17g" % x


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _print_config(args, **extra):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    print("config " + json.dumps(cfg, sort_keys=True, default=str))


def _load_shape(path):
    try:
        return load_shape(path)
    except FileNotFoundError as exc:
        raise InputError(f"{path}: file not found") from exc
    except (MeshError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _functional_from(path, rep: str, strict: bool = True) -> tuple[DiracFunctional, object]:
    if is_functional_file(path):
        try:
            return DiracFunctional.load(path), None
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from exc
    shape = _load_shape(path)
    try:
        if rep == "currents":
            if not isinstance(shape, TriangleMesh):
                raise InputError("currents representation needs a triangle mesh")
            return currents_of_mesh(shape), shape
        return normal_cycle(shape, strict=strict), shape
    except MeshError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _sigmas(text: str) -> tuple:
    try:
        vals = tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise InputError(f"bad --sigmas {text!r}") from exc
    if not vals or not all(math.isfinite(v) and v > 0 for v in vals):
        raise InputError("--sigmas needs positive values")
    return vals


def _kernel(sigma: float) -> GaussianKernel:
    try:
        return GaussianKernel(sigma)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# ------------------------------------------------------------- subcommands


def run_info(args) -> int:
    _print_config(args)
    shape = _load_shape(args.path)
    if isinstance(shape, Polyline):
        print(f"vertices={len(shape.vertices)} segments={len(shape.segments)} nc_deltas={len(shape.vertices)}")
    else:
        try:
            et = build_edge_table(shape)
        except MeshError as exc:
            raise InputError(f"{args.path}: {exc}") from exc
        nb = len(boundary_vertices(shape, et).vertices)
        print(
            f"vertices={shape.n_vertices} triangles={shape.n_triangles} "
            f"edges={len(et.edges)} boundary={nb} nc_deltas={len(et.edges) + nb}"
        )
    lo, hi = shape.vertices.min(axis=0), shape.vertices.max(axis=0)
    print("bbox_min=" + ",".join(_fmt(x) for x in lo) + " bbox_max=" + ",".join(_fmt(x) for x in hi))
    return 0


def _theorem_distance(rep, kernel, a, b):
    if rep == "currents":
        f = currents_inner_direct
    elif isinstance(a, TriangleMesh):
        f = nc_inner_theorem_surface
    else:
        f = nc_inner_theorem_curve
    return f(kernel, a, a) - 2.0 * f(kernel, a, b) + f(kernel, b, b)


def run_metric(args) -> int:
    reps = [args.rep] if args.rep else ["ncycle", "currents"]
    _print_config(args, reps=reps)
    kernel = _kernel(args.sigma)
    a, b = _load_shape(args.mesh_a), _load_shape(args.mesh_b)
    if type(a) is not type(b):
        raise InputError("both inputs must be meshes or both polylines")
    if isinstance(a, Polyline):
        if args.rep == "currents":
            raise InputError("currents representation needs triangle meshes")
        reps = ["ncycle"]
    out = {}
    for rep in reps:
        try:
            mu = currents_of_mesh(a) if rep == "currents" else normal_cycle(a)
            nu = currents_of_mesh(b) if rep == "currents" else normal_cycle(b)
        except MeshError as exc:
            raise InputError(str(exc)) from exc
        d = dual_distance_sq(kernel, mu, nu)
        oracle = _theorem_distance(rep, kernel, a, b)
        scale = dual_inner(kernel, mu, mu) + dual_inner(kernel, nu, nu)
        dev = abs(d - oracle) / scale if scale > 0 else abs(d - oracle)
        out[rep] = {"distance_sq": d, "oracle_distance_sq": oracle, "rel_deviation": dev}
        print(f"{rep}: distance_sq={_fmt(d)} oracle={_fmt(oracle)} rel_deviation={_fmt(dev)}")
    if args.out:
        Path(args.out).write_text(_dump_json(out), encoding="ascii")
    return 0


def _resolve_lambda(args):
    if args.auto_lambda or args.lambda_ is None:
        return None
    if not (math.isfinite(args.lambda_) and args.lambda_ > 0):
        raise InputError("--lambda must be positive")
    return args.lambda_


def run_compress(args) -> int:
    method = METHOD_NAMES[args.method]
    lam = _resolve_lambda(args)
    _print_config(args, method_resolved=method, lambda_resolved="auto" if lam is None else lam)
    kernel = _kernel(args.sigma)
    mu, _ = _functional_from(args.input, args.rep)
    if not 1 <= args.m <= mu.n:
        raise InputError(f"--m must lie in [1, {mu.n}], got {args.m}")
    try:
        cfg = RlsConfig(args.m, lam, args.seed, method=method)
        res = compress(kernel, mu, cfg)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    side = res.sidecar()
    if args.no_timing:
        side["wall_ms"] = 0.0
    print(f"n={mu.n} m={res.m} rel_error={_fmt(res.rel_error)} error_sq={_fmt(res.error_sq)} wall_ms={res.wall_ms:.1f}")
    if args.out:
        prefix = Path(args.out)
        res.compressed.save(prefix.with_suffix(".functional"))
        prefix.with_suffix(".json").write_text(_dump_json(side), encoding="ascii")
    return 0


def run_decay(args) -> int:
    methods = [METHOD_NAMES[m] for m in (args.method or ["rls", "uniform"])]
    lam = _resolve_lambda(args)
    try:
        m_list = sorted({int(s) for s in args.m.split(",") if s.strip()})
    except ValueError as exc:
        raise InputError(f"bad --m list {args.m!r}") from exc
    _print_config(args, methods=methods, m_list=m_list)
    kernel = _kernel(args.sigma)
    mu, _ = _functional_from(args.input, args.rep)
    if not m_list or m_list[0] < 1 or m_list[-1] > mu.n:
        raise InputError(f"--m values must lie in [1, {mu.n}]")
    seeds = range(args.seed, args.seed + args.seeds)
    try:
        rows = decay_curve(kernel, mu, m_list, methods, seeds, lambda_=lam)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if args.no_timing:
        for r in rows:
            r["wall_ms"] = 0.0
    text = decay_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="ascii")
    for m in m_list:
        for meth in methods:
            errs = [r["rel_error"] for r in rows if r["m"] == m and r["method"] == meth]
            print(f"m={m} method={meth} median_rel_error={_fmt(float(np.median(errs)))}")
    if not args.out:
        sys.stdout.write(text)
    return 0


def run_match(args) -> int:
    sigmas = _sigmas(args.sigmas)
    try:
        mode, frozen_m = parse_template_compression(args.compress_template)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    method = METHOD_NAMES[args.method]
    _print_config(args, sigmas_resolved=list(sigmas), template_mode=mode)
    kernel = _kernel(args.sigma)
    template = _load_shape(args.template)
    target, target_shape = _functional_from(args.target, "ncycle")
    if mode == "none":
        target_fn = target
    else:
        m = args.m if args.m is not None else max(1, target.n // 10)
        if not 1 <= m <= target.n:
            raise InputError(f"--m must lie in [1, {target.n}], got {m}")
        res = compress(kernel, target, RlsConfig(m, _resolve_lambda(args), args.seed, method=method),
                       with_trace_bound=False)
        target_fn = res.compressed
        print(f"target n={target.n} m={m} rel_error={_fmt(res.rel_error)}")
    if args.spacing is not None:
        q0 = grid_control_points(template.vertices, spacing=args.spacing, margin=args.margin)
    else:
        q0 = grid_control_points(template.vertices, per_axis=args.grid, margin=args.margin)
    try:
        shooting = ShootingConfig(q0, sigmas, args.steps, args.reg_weight)
        problem = MatchProblem(template, target_fn, shooting, kernel,
                               template_compression=args.compress_template, seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    print(f"control_points={len(q0)} template_deltas={problem.builder.n_deltas} target_deltas={target_fn.n}")
    result = optimize_match(problem, args.iters, seed=args.seed)
    ref = target_shape.vertices if target_shape is not None else target.points
    d0 = hausdorff_distance(template.vertices, ref)
    d1 = hausdorff_distance(result.deformed.vertices, ref)
    report = match_report(result, d0, d1)
    if args.no_timing:
        report["wall_ms"] = 0.0
    print(
        f"iters={result.iters} objective={_fmt(result.objective_trace[0])}->{_fmt(result.final.objective)} "
        f"hausdorff_init={_fmt(d0)} hausdorff_final={_fmt(d1)} wall_ms={result.wall_ms:.1f}"
    )
    if args.out:
        prefix = Path(args.out)
        prefix.with_suffix(".json").write_text(_dump_json(report), encoding="ascii")
        if isinstance(result.deformed, TriangleMesh):
            save_obj(result.deformed, prefix.with_suffix(".obj"))
        else:
            save_polyline(result.deformed, prefix.with_suffix(".obj"))
    return 0


def _parse_params(items):
    params = {}
    for item in items or []:
        if "=" not in item:
            raise InputError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            params[k] = json.loads(v)
        except json.JSONDecodeError:
            params[k] = v
        if isinstance(params[k], list):
            params[k] = tuple(params[k])
    return params


def run_gen(args) -> int:
    params = _parse_params(args.param)
    _print_config(args, params_resolved=params)
    try:
        shape = make_shape(args.kind, seed=args.seed, **params)
    except (MeshError, TypeError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    if isinstance(shape, TriangleMesh):
        save_obj(shape, args.out)
        print(f"wrote {args.out}: vertices={shape.n_vertices} triangles={shape.n_triangles}")
    else:
        save_polyline(shape, args.out)
        print(f"wrote {args.out}: vertices={len(shape.vertices)} segments={len(shape.segments)}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads for kernel sums")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--verbose", action="store_true")

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--sigma", type=float, default=0.2, help="data kernel length scale")
    lam = sampling.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lambda_", type=float, default=None, help="ridge parameter")
    lam.add_argument("--auto-lambda", action="store_true", help="choose lambda from the spectrum (default)")
    sampling.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 for byte-stable files")

    p = argparse.ArgumentParser(prog="ncycle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("info", parents=[common], help="mesh counts and normal-cycle size")
    s.add_argument("path")
    s.set_defaults(func=run_info)

    s = sub.add_parser("metric", parents=[common], help="squared dual distance between two shapes")
    s.add_argument("mesh_a")
    s.add_argument("mesh_b")
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--rep", choices=["currents", "ncycle"], default=None, help="default: both")
    s.add_argument("--out")
    s.set_defaults(func=run_metric)

    s = sub.add_parser("compress", parents=[common, sampling], help="Nystrom compression of one functional")
    s.add_argument("input", help="OBJ/polyline or functional file")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--method", choices=sorted(METHOD_NAMES), default="rls")
    s.add_argument("--rep", choices=["currents", "ncycle"], default="ncycle")
    s.add_argument("--out", help="output prefix for .functional and .json")
    s.set_defaults(func=run_compress)

    s = sub.add_parser("decay", parents=[common, sampling], help="error decay table over m and seeds")
    s.add_argument("input")
    s.add_argument("--m", required=True, help="comma-separated sample sizes")
    s.add_argument("--method", action="append", choices=sorted(METHOD_NAMES), help="repeatable; default rls and uniform")
    s.add_argument("--seeds", type=int, default=5, help="number of seeds starting at --seed")
    s.add_argument("--rep", choices=["currents", "ncycle"], default="ncycle")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=run_decay)

    s = sub.add_parser("match", parents=[common, sampling], help="LDDMM matching with a normal-cycle data term")
    s.add_argument("template")
    s.add_argument("target", help="OBJ/polyline or functional file")
    s.add_argument("--m", type=int, default=None, help="target sample size (default 10%% of deltas)")
    s.add_argument("--method", choices=sorted(METHOD_NAMES), default="rls")
    s.add_argument("--compress-template", default="target-only", help="none, target-only or frozen:<m>")
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--reg-weight", type=float, default=1.0)
    s.add_argument("--sigmas", default=",".join(str(x) for x in DEFAULT_SIGMAS))
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--grid", type=int, default=4, help="control points per axis")
    s.add_argument("--spacing", type=float, default=None, help="control grid step (overrides --grid)")
    s.add_argument("--margin", type=float, default=0.3)
    s.add_argument("--out", help="output prefix for .json report and .obj mesh")
    s.set_defaults(func=run_match)

    s = sub.add_parser("gen", parents=[common], help="write a synthetic shape")
    s.add_argument("kind", choices=SHAPE_KINDS)
    s.add_argument("--param", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.set_defaults(func=run_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        set_threads(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FloatingPointError, np.linalg.LinAlgError, MatchAborted) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
