"""Command line interface: model, scan, find, plan, simulate, sweep, accept.

Exit codes: 0 success, 1 domain error (or a failed acceptance run), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .conical import ConicalError, Intersection, locate_intersection, stability_probe
from .experiment import (DEFAULT_EPSILONS, DOMAIN_ERRORS, AcceptanceConfig, ExperimentError, SweepSpec,
                         acceptance_suite, sweep, write_sweep)
from .model import build_galerkin, model_to_dict, resolve
from .planner import ControlPath, SpreadTarget, plan, vertexless_variants
from .propagate import propagate_adiabatic, propagate_effective, propagate_full, results_to_csv
from .spectral import Rect, certify_band, eigvals_many, region_grid

ERRORS = DOMAIN_ERRORS + (ExperimentError, OSError, KeyError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors print the full help of the offending (sub)command and exit 2."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"\n{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers

def _emit(args, text: str, suffix: str = "") -> None:
    if args.out in (None, "-"):
        sys.stdout.write(text)
        return
    out = Path(args.out)
    if suffix and out.suffix == "":
        out = out.with_suffix(suffix)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_json(path):
    return json.loads(Path(path).read_text())


def _tol_overrides(raw):
    if raw is None:
        return {}
    text = Path(raw[1:]).read_text() if raw.startswith("@") else raw
    data = json.loads(text)
    if not isinstance(data, dict):
        raise UsageError("--tol-overrides must be a JSON object")
    return {str(k): float(v) for k, v in data.items()}


def _potential(ref):
    """A constant or a file of uniform samples on [0, pi] (whitespace or comma separated)."""
    if ref is None:
        return None
    try:
        return float(ref)
    except ValueError:
        pass
    text = Path(ref).read_text().replace(",", " ")
    return np.array(text.split(), dtype=float)


def _load_path(ref) -> ControlPath:
    return ControlPath.from_json(_read_json(ref))


def _load_intersections(ref) -> list[Intersection]:
    data = _read_json(ref)
    items = data["intersections"] if isinstance(data, dict) else data
    return [Intersection.from_json(d) for d in items]


def _grid_seeds(model, j, xlim, ylim, density, count):
    """Local minima of the pair gap on a grid, smallest first."""
    region = Rect((xlim[0], ylim[0]), (xlim[1], ylim[1]))
    pts, _ = region_grid(region, density)
    w = eigvals_many(model, pts)
    gap = w[:, j + 1] - w[:, j]
    order = np.argsort(gap, kind="stable")
    return region, pts[order[:count]]


def _find(model, j, args, region=None):
    """Locate and certify intersections of pair (j, j+1); deduplicated by position."""
    if args.seed_point is not None:
        seeds = [np.array(args.seed_point, float)]
        if region is None and args.xlim is not None:
            region = Rect((args.xlim[0], args.ylim[0]), (args.xlim[1], args.ylim[1]))
    else:
        region, seeds = _grid_seeds(model, j, args.xlim, args.ylim, args.density, args.candidates)
    found: list[Intersection] = []
    last = None
    for s in seeds:
        try:
            x = locate_intersection(model, j, s, region, ident=f"x{j}_{len(found)}")
        except ConicalError as exc:
            last = exc
            continue
        if all(np.hypot(*(x.point - y.point)) > 1e-6 for y in found):
            found.append(x)
    if not found:
        raise ConicalError(f"no conical intersection of levels ({j}, {j + 1}) found"
                           + (f": {last}" if last else ""))
    return found


# ---------------------------------------------------------------------------
# subcommands

def cmd_model(args):
    if args.action == "galerkin":
        model = build_galerkin(args.modes, _potential(args.v0), _potential(args.v1), _potential(args.v2),
                               args.quad_points, name=args.name)
    else:
        model = resolve(args.model)
    if args.action == "inspect":
        w0 = np.linalg.eigvalsh(model.h0)
        info = {"name": model.name, "dim": model.dim, "lipschitz": model.lipschitz(),
                "h0_eigenvalues": w0.tolist(), "metadata": model.metadata}
        _emit(args, _dumps(info), ".json")
    else:
        text = json.dumps(model_to_dict(model), indent=1) + "\n"
        _emit(args, text, ".json")
    return 0


def cmd_scan(args):
    model = resolve(args.model)
    region = Rect((args.xlim[0], args.ylim[0]), (args.xlim[1], args.ylim[1]))
    pts, _ = region_grid(region, args.density)
    w = eigvals_many(model, pts)
    cols = ["u1", "u2"] + [f"lambda_{i}" for i in range(model.dim)] + [f"gap_{i}" for i in range(model.dim - 1)]
    lines = [",".join(cols)]
    gaps = np.diff(w, axis=1)
    for p, ww, gg in zip(pts, w, gaps):
        lines.append(",".join(repr(float(v)) for v in (*p, *ww, *gg)))
    _emit(args, "\r\n".join(lines) + "\r\n", ".csv")
    if args.band is not None:
        band = certify_band(model, args.band, region, args.density)
        sys.stderr.write(f"band {band.indices} certified with gamma = {band.gamma:.6g}\n")
    return 0


def cmd_find(args):
    model = resolve(args.model)
    found = _find(model, args.pair, args)
    out = []
    for x in found:
        rec = x.to_json()
        if args.probe:
            rec["stability"] = stability_probe(model, x, args.probe_delta, args.probe_trials, seed=args.seed).to_json()
        out.append(rec)
    _emit(args, _dumps({"model": model.name, "pair": args.pair, "intersections": out}), ".json")
    return 0


def cmd_plan(args):
    try:
        target = SpreadTarget(tuple(args.target))
    except ValueError as exc:
        raise ValueError(f"invalid spread target: {exc}") from None
    model = resolve(args.model)
    if len(target.p) > model.dim:
        raise ValueError(f"target has {len(target.p)} entries but the model has {model.dim} levels")
    n_vert = max(target.top_level, 1)
    if args.intersections:
        xs = _load_intersections(args.intersections)
    else:
        xs = [_find(model, j, args)[0] for j in range(n_vert)]
    approach = None if args.approach is None else list(args.approach)
    path = plan(model, xs, args.u0, args.u1, target, radius=args.radius, exit_length=args.exit_length,
                approach_angles=approach, n_samples=args.samples, seed=args.seed,
                connector_gap_tol=args.tols.get("connector_gap_tol"))
    if args.variant:
        path = vertexless_variants(path, args.variant, n_samples=args.samples)
    _emit(args, json.dumps(path.to_json()) + "\n", ".json")
    return 0


def cmd_simulate(args):
    model = resolve(args.model)
    path = _load_path(args.path)
    target = args.target or path.meta.get("target")
    c_step = args.tols.get("c_step", 0.1)
    if args.method == "full":
        res = propagate_full(model, path, args.eps, target=target, c_step=c_step)
    elif args.method == "adiabatic":
        res = propagate_adiabatic(model, path, args.eps, target=target, c_step=c_step)
    else:
        res = propagate_effective(model, path, args.eps, target=target, coupling=args.method == "effective",
                                  c_step=c_step)
    if args.csv:
        _emit(args, results_to_csv([res], timing=args.timing), ".csv")
    else:
        _emit(args, _dumps(res.to_json(dump_state=args.dump_state, timing=args.timing)), ".json")
    return 0


def cmd_sweep(args):
    model = resolve(args.model)
    path = _load_path(args.path)
    if args.variant:
        path = vertexless_variants(path, args.variant)
    if args.eps is not None:
        eps = tuple(args.eps)
    elif args.eps_range is not None:
        lo, hi, n = args.eps_range
        eps = tuple(float(e) for e in np.geomspace(lo, hi, int(n)))
    else:
        eps = DEFAULT_EPSILONS
    spec = SweepSpec(model, path, eps, repetitions=args.repetitions, expected=args.expected,
                     tolerance=args.tols.get("slope_tolerance", 0.15), c_step=args.tols.get("c_step", 0.1),
                     threads=args.threads, allow_small_eps=args.allow_small_eps,
                     label=args.variant or "path")
    report = sweep(spec, model, path)
    stem = Path(args.out or "sweep")
    csv_path, json_path = write_sweep(report, stem.with_suffix(""), timing=args.timing)
    sys.stderr.write(f"slope {report.slope:.4f} ({report.verdict}); wrote {csv_path} and {json_path}\n")
    return 0 if report.verdict in ("pass", "n/a") else 1


def cmd_accept(args):
    criteria = None if args.criteria is None else tuple(int(c) for c in args.criteria.split(","))
    cfg = AcceptanceConfig(two_level=args.model, three_level=args.three_level, seed=args.seed,
                           criteria=criteria, sabotage=args.sabotage, sweep_scale=args.scale,
                           threads=args.threads, tolerances=args.tols)

    def progress(rec, seconds):
        detail = rec.get("summary", rec.get("reason", ""))
        sys.stderr.write(f"[{rec['verdict'].upper():7s}] {rec['id']:2d} {rec['name']}: {detail}"
                         + (f" ({seconds:.1f} s)" if args.timing else "") + "\n")

    report = acceptance_suite(cfg, progress)
    _emit(args, report.dumps(timing=args.timing), ".json")
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# parser

def _limits(p):
    p.add_argument("--xlim", type=float, nargs=2, default=(-2.0, 2.0), metavar=("LO", "HI"))
    p.add_argument("--ylim", type=float, nargs=2, default=(-2.0, 2.0), metavar=("LO", "HI"))
    p.add_argument("--density", type=float, default=20.0, help="grid points per unit length")


def _finder(p):
    _limits(p)
    p.add_argument("--seed-point", type=float, nargs=2, metavar=("U1", "U2"),
                   help="start the descent here instead of scanning a grid")
    p.add_argument("--candidates", type=int, default=8, help="grid minima to try when scanning")


def _globals(p, suppress):
    # subcommands repeat the global flags without defaults so values given
    # before the subcommand survive
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--model", default=d("builtin:pauli2"), help="builtin:<name> or a model JSON file")
    p.add_argument("--out", default=d(None), help="output file (stdout if omitted)")
    p.add_argument("--seed", type=int, default=d(0), help="seed for every random choice")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads for sweeps")
    p.add_argument("--tol-overrides", default=d(None), help="JSON object (or @file) overriding named tolerances")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conic-climb", description=__doc__.splitlines()[0])
    _globals(parser, suppress=False)
    common = _Parser(add_help=False)
    _globals(common, suppress=True)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("model", parents=[common], help="export, inspect or build models")
    p.add_argument("action", choices=["build", "inspect", "galerkin"])
    p.add_argument("--modes", type=int, default=6)
    p.add_argument("--quad-points", type=int, default=None)
    p.add_argument("--v0", help="constant or file of uniform samples on [0, pi] (endpoints included)")
    p.add_argument("--v1", help="as --v0")
    p.add_argument("--v2", help="as --v0")
    p.add_argument("--name", default="galerkin")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("scan", parents=[common], help="eigenvalues and gaps on a grid (CSV)")
    _limits(p)
    p.add_argument("--band", type=int, nargs="+", help="also certify this band on the grid region")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("find", parents=[common], help="locate and certify conical intersections")
    p.add_argument("--pair", type=int, default=0, help="lower level index j of the pair (j, j+1)")
    _finder(p)
    p.add_argument("--probe", action="store_true", help="also run a structural stability probe")
    p.add_argument("--probe-delta", type=float, default=1e-3)
    p.add_argument("--probe-trials", type=int, default=20)
    p.set_defaults(func=cmd_find)

    p = sub.add_parser("plan", parents=[common], help="build a control path for a spread target")
    p.add_argument("--target", type=float, nargs="+", required=True, help="moduli p_0 ... p_k")
    p.add_argument("--u0", type=float, nargs=2, required=True)
    p.add_argument("--u1", type=float, nargs=2, required=True)
    p.add_argument("--intersections", help="JSON from `find` (one intersection per vertex, in order)")
    _finder(p)
    p.add_argument("--radius", type=float, default=0.3)
    p.add_argument("--exit-length", type=float, default=None)
    p.add_argument("--approach", type=float, nargs="+", default=None, help="approach angle per vertex")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--variant", choices=["generic_c2", "jet_matched"])
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", parents=[common], help="propagate along a path for one epsilon")
    p.add_argument("--path", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--method", choices=["full", "adiabatic", "effective", "effective_adiabatic"], default="full")
    p.add_argument("--target", type=float, nargs="+")
    p.add_argument("--csv", action="store_true", help="write a CSV row instead of JSON")
    p.add_argument("--dump-state", action="store_true")
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="epsilon sweep and exponent fit (CSV + JSON)")
    p.add_argument("--path", required=True)
    p.add_argument("--eps", type=float, nargs="+")
    p.add_argument("--eps-range", type=float, nargs=3, metavar=("LO", "HI", "N"))
    p.add_argument("--variant", choices=["generic_c2", "jet_matched"])
    p.add_argument("--expected", type=float, default=None, help="expected exponent for the verdict")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--allow-small-eps", action="store_true", help="permit epsilon below 1e-3")
    p.add_argument("--timing", action="store_true", help="fill the seconds column")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("accept", parents=[common], help="run the acceptance suite")
    p.add_argument("--three-level", default="builtin:three_level")
    p.add_argument("--criteria", default=None, help="comma-separated subset, e.g. 1,2,9")
    p.add_argument("--scale", type=float, default=100.0, help="geometry scale of the exponent sweeps")
    p.add_argument("--sabotage", action="store_true", help="flip the non-mixing field (negative control)")
    p.add_argument("--timing", action="store_true", help="include runtimes in the report")
    p.set_defaults(func=cmd_accept)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        args.tols = _tol_overrides(args.tol_overrides)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        sub.print_help(sys.stderr)
        sys.stderr.write(f"\n{sub.prog}: error: {exc}\n")
        return 2
    except ERRORS as exc:
        sys.stderr.write(f"conic-climb {args.command}: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
