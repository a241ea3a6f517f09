"""Command-line entry point ``tansurf``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure or a
failed check.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ._parallel import worker_count
from .checks import run_checks
from .curves import RANK_TOL, nabla_type
from .expr import ExprError
from .export import write_obj, write_surface_csv
from .genericity import CurveSampler, type_census
from .geodesic import IntegrationError, solve_geodesic
from .geometry import flat_connection
from .scene import SceneError, load_scene
from .surface import Status, classify_point, scan_interval, tangent_surface

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_classify(args) -> int:
    conn, curve, _ = load_scene(args.scene)
    rep = classify_point(conn, curve, args.t0, args.tol)
    _emit(rep.as_dict(), args.json)
    return EXIT_NUMERIC if rep.status is Status.INCOMPLETE else EXIT_OK


def cmd_scan(args) -> int:
    conn, curve, _ = load_scene(args.scene)
    if args.n < 2:
        raise UsageError("--n must be >= 2")
    res = scan_interval(conn, curve, args.t, args.n, args.tol)
    out = {
        "samples": [r.as_dict() for r in res.samples],
        "zeros": [{"t": float(t), "report": r.as_dict()} for t, r in zip(res.zeros, res.zero_reports)],
    }
    _emit(out, args.json)
    bad = any(r.status is Status.INCOMPLETE for r in res.samples + res.zero_reports)
    return EXIT_NUMERIC if bad else EXIT_OK


def cmd_surface(args) -> int:
    conn, curve, _ = load_scene(args.scene)
    if args.nt < 2 or args.ns < 2:
        raise UsageError("--nt and --ns must be >= 2")
    fmt = args.format or ("obj" if curve.dim <= 3 else "csv")
    if fmt == "obj" and curve.dim > 3:
        raise UsageError("OBJ output needs m <= 3; use --format csv")
    tg = np.linspace(args.t[0], args.t[1], args.nt)
    sg = np.linspace(args.s[0], args.s[1], args.ns)
    patch = tangent_surface(conn, curve, tg, sg, frames=False)
    n = write_obj(patch.points, args.out) if fmt == "obj" else write_surface_csv(tg, sg, patch.points, args.out)
    print(json.dumps({"out": args.out, "format": fmt, "vertices": n}))
    return EXIT_OK


def cmd_geodesic(args) -> int:
    conn, _, _ = load_scene(args.scene)
    m = conn.dim
    if len(args.x) != m or len(args.v) != m:
        raise UsageError(f"--x and --v need {m} values")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    sol = solve_geodesic(conn, args.x, args.v, args.smax)
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write(",".join(["s"] + [f"x{k + 1}" for k in range(m)] + [f"v{k + 1}" for k in range(m)]) + "\n")
        for s in np.linspace(0.0, args.smax, args.steps + 1):
            st = sol.state(s)
            fh.write(",".join(f"{v:.17g}" for v in [s, *st.pos, *st.vel]) + "\n")
    print(json.dumps({"out": args.out, "rows": args.steps + 1}))
    return EXIT_OK


def cmd_nabla_type(args) -> int:
    conn, curve, _ = load_scene(args.scene)
    nt = nabla_type(conn, curve, args.t0, args.rmax, args.tol)
    _emit({"t0": args.t0, **nt.as_dict()})
    return EXIT_OK


def cmd_census(args) -> int:
    if args.dim < 1 or args.curves < 1 or args.grid < 1:
        raise UsageError("--dim, --curves and --grid must be >= 1")
    try:
        sampler = CurveSampler(args.dim, args.degree, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    conn = load_scene(args.scene).connection if args.scene else flat_connection(args.dim)
    if conn.dim != args.dim:
        raise UsageError("scene dimension differs from --dim")
    res = type_census(conn, sampler, args.curves, np.linspace(*sampler.domain, args.grid), args.tol)
    _emit({"seed": args.seed, "degree": args.degree, "curves": args.curves, **res.as_dict()}, args.json)
    return EXIT_NUMERIC if res.violations else EXIT_OK


def cmd_check(args) -> int:
    rep = run_checks(load_scene(args.scene), seed=args.seed)
    _emit(rep.as_dict())
    return EXIT_OK if rep.passed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tansurf", description="Tangent surfaces of curves under affine connections.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    c = sub.add_parser("classify", help="classify the singularity at one parameter")
    c.add_argument("--scene", required=True)
    c.add_argument("--t0", type=float, required=True)
    c.add_argument("--tol", type=float, default=RANK_TOL)
    c.add_argument("--json")
    c.set_defaults(fn=cmd_classify)

    c = sub.add_parser("scan", help="classify samples and refine psi zeros")
    c.add_argument("--scene", required=True)
    c.add_argument("--t", type=float, nargs=2, required=True, metavar=("A", "B"))
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--tol", type=float, default=RANK_TOL)
    c.add_argument("--json")
    c.set_defaults(fn=cmd_scan)

    c = sub.add_parser("surface", help="sample the tangent surface and write a mesh")
    c.add_argument("--scene", required=True)
    c.add_argument("--t", type=float, nargs=2, required=True, metavar=("A", "B"))
    c.add_argument("--s", type=float, nargs=2, required=True, metavar=("A", "B"))
    c.add_argument("--nt", type=int, required=True)
    c.add_argument("--ns", type=int, required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--format", choices=("obj", "csv"))
    c.set_defaults(fn=cmd_surface)

    c = sub.add_parser("geodesic", help="integrate one geodesic to CSV")
    c.add_argument("--scene", required=True)
    c.add_argument("--x", type=float, nargs="+", required=True)
    c.add_argument("--v", type=float, nargs="+", required=True)
    c.add_argument("--smax", type=float, required=True)
    c.add_argument("--steps", type=int, default=100)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_geodesic)

    c = sub.add_parser("nabla-type", help="nabla-type at one parameter")
    c.add_argument("--scene", required=True)
    c.add_argument("--t0", type=float, required=True)
    c.add_argument("--rmax", type=int)
    c.add_argument("--tol", type=float, default=RANK_TOL)
    c.set_defaults(fn=cmd_nabla_type)

    c = sub.add_parser("census", help="nabla-type census over random polynomial curves")
    c.add_argument("--dim", type=int, required=True)
    c.add_argument("--degree", type=int, required=True)
    c.add_argument("--curves", type=int, required=True)
    c.add_argument("--grid", type=int, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--tol", type=float, default=RANK_TOL)
    c.add_argument("--scene", help="take the connection from this scene (default: flat)")
    c.add_argument("--json")
    c.set_defaults(fn=cmd_census)

    c = sub.add_parser("check", help="remainder, sigma and mode checks; exit 2 on a breach")
    c.add_argument("--scene", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_check)
    return p


def run_command(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        try:
            worker_count()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return args.fn(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, ExprError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv=None):
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
