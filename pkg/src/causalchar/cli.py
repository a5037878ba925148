"""Command-line entry point: solve-linear, solve-quasilinear, verify, inpaint.

Exit codes: 0 success, 1 configuration error, 2 audit failure, 3 solver
failure, 4 failed verification assertion.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .errors import CausalityViolationError, FormatError, MaskInvalidError, SolverError
from .fields import audit_causality_condition
from .grid import field_norms
from .linear_solver import solve_linear
from .problems import PRESETS, load_preset
from .quasilinear import StripePlan, solve_quasilinear

log = logging.getLogger("causalchar")

EXIT_OK, EXIT_CONFIG, EXIT_AUDIT, EXIT_SOLVER, EXIT_ASSERT = 0, 1, 2, 3, 4

DEFAULTS = {
    "preset": None,
    "grid": 128,
    "out": "out",
    "seed": 0,
    "threads": 1,
    "tol": None,
    "dt": None,
    "method": "rk4",
    "stripe_h": 0.05,
    "lam_max": None,
}
SUITE_NAMES = ("manufactured", "det-bounds", "contraction", "uniqueness", "continuous-dependence")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _load_config(path):
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _resolve(args, cfg, key):
    val = getattr(args, key, None)
    if val is None:
        val = cfg.get(key, DEFAULTS.get(key))
    return val


def _settings(args, cfg):
    s = {k: _resolve(args, cfg, k) for k in DEFAULTS}
    if s["grid"] is None or int(s["grid"]) < 8:
        raise ConfigError(f"grid must be an integer >= 8, got {s['grid']}")
    s["grid"] = int(s["grid"])
    if int(s["threads"]) < 1:
        raise ConfigError("threads must be at least 1")
    if s["tol"] is not None and not float(s["tol"]) > 0:
        raise ConfigError(f"tol must be positive, got {s['tol']}")
    if s["dt"] is not None and not float(s["dt"]) > 0:
        raise ConfigError(f"dt must be positive, got {s['dt']}")
    if s["method"] not in ("rk4", "rk45"):
        raise ConfigError(f"unknown integrator method {s['method']!r}")
    if not float(s["stripe_h"]) > 0:
        raise ConfigError("stripe_h must be positive")
    return s


def _problem(s):
    name = s["preset"]
    if name is None:
        raise ConfigError("no preset given (use --preset or a config file)")
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    p = load_preset(name, s["grid"])
    changes = {"method": s["method"]}
    if s["dt"] is not None:
        changes["dt"] = float(s["dt"])
    p.cfg = p.cfg.replace(**changes)
    return p


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _g(x):
    return f"{x:.12e}" if isinstance(x, float) else str(x)


def _write_solution(out, u, problem, extra=()):
    os.makedirs(out, exist_ok=True)
    u.save(os.path.join(out, "u.grid"))
    u.to_pgm(os.path.join(out, "u.pgm"))
    norms = field_norms(u)
    rows = [[k, _g(float(v))] for k, v in norms.items()]
    bounds = problem.self_map_bounds()
    rows += [["M_star", _g(bounds.M_star)], ["M_star_star", _g(bounds.M_star_star)]]
    if problem.exact is not None:
        exact = problem.exact(u.centers().reshape(-1, 2)).reshape(u.shape)
        err = float(np.sum(np.abs(u.values - exact)[u.interior]) * u.cell_area)
        rows.append(["l1_error_vs_exact", _g(err)])
    rows += [[k, _g(v)] for k, v in extra]
    _write_rows(os.path.join(out, "norms.csv"), ["quantity", "value"], rows)


def _audit_or_fail(problem, out):
    rep = audit_causality_condition(problem.c, problem.domain.time, problem.grid,
                                    v=problem.grid.constant(0.0) if problem.functional else None)
    if not rep.ok:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "audit.csv")
        rep.to_csv(path)
        raise CausalityViolationError(
            f"causality audit failed: min <c,N> = {rep.min_dot:.4g} < beta = {rep.beta:.4g}; see {path}"
        )


def cmd_solve_linear(args):
    cfg = _load_config(args.config)
    s = _settings(args, cfg)
    problem = _problem(s)
    if problem.functional:
        raise ConfigError(f"preset {problem.name} has functional coefficients; use solve-quasilinear")
    _audit_or_fail(problem, s["out"])
    u = solve_linear(problem.domain, problem.c, problem.f, problem.u0, problem.grid, problem.cfg,
                     int(s["threads"]), audit=False)
    _write_solution(s["out"], u, problem)
    print(f"wrote {s['out']}/u.grid, u.pgm, norms.csv")
    return EXIT_OK


def cmd_solve_quasilinear(args):
    cfg = _load_config(args.config)
    s = _settings(args, cfg)
    problem = _problem(s)
    if not getattr(problem.c, "causal", True):
        os.makedirs(s["out"], exist_ok=True)
        _write_rows(os.path.join(s["out"], "audit.csv"), ["field", "causal"], [[problem.c.name, 0]])
        raise CausalityViolationError(f"{problem.c.name} is not functionally causal")
    _audit_or_fail(problem, s["out"])
    tol = float(s["tol"]) if s["tol"] is not None else problem.default_tol()
    lam_max = float(s["lam_max"]) if s["lam_max"] is not None else 1.0 - problem.cfg.eps_stop
    try:
        plan = StripePlan(lam_max, float(s["stripe_h"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    u, diag = solve_quasilinear(problem.domain, problem.c, problem.f, problem.u0, problem.grid, plan, tol,
                                problem.cfg, threads=int(s["threads"]))
    _write_solution(s["out"], u, problem, [("tol", tol), ("total_iterations", diag.total_iterations)])
    diag.to_csv(os.path.join(s["out"], "diagnostics.csv"))
    print(f"converged: {len(diag.stripes)} stripes, {diag.total_iterations} iterations; wrote {s['out']}")
    return EXIT_OK


def _run_suite(name, s):
    from . import verification as ver

    seed = int(s["seed"])
    threads = int(s["threads"])
    if name == "manufactured":
        ladder = tuple(s.get("ladder") or (64, 128, 256))
        return ver.run_manufactured(ladder=ladder, threads=threads)
    if name == "det-bounds":
        s = dict(s, preset=s["preset"] or "disk-radial-f0")
        p = _problem(s)
        expected = {0.25: (2 * 0.75**3, 2.0), 0.5: (0.25, 2.0)} if p.name == "disk-radial-f0" else None
        vs = (None, None, None) if not p.functional else tuple(ver.probe_fields(p, seed, 3))
        return ver.run_det_bounds(p.domain, p.c, (0.25, 0.5), p.cfg, vs, expected=expected)
    p = _problem(dict(s, preset=s["preset"] or "disk-causal-eps0.1"))
    tol = float(s["tol"]) if s["tol"] is not None else None
    if name == "contraction":
        return ver.run_contraction(p, seed=seed, threads=threads)
    if name == "uniqueness":
        return ver.run_uniqueness(p, tol=tol, seed=seed, threads=threads)
    if name == "continuous-dependence":
        return ver.run_continuous_dependence(p, spec=ver.PerturbationSpec(seed=seed), threads=threads)
    raise ConfigError(f"unknown suite {name!r}")


def cmd_verify(args):
    cfg = _load_config(args.config)
    if args.suite != "all" and args.suite not in SUITE_NAMES:
        raise ConfigError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITE_NAMES + ('all',))}")
    s = _settings(args, cfg)
    s["ladder"] = args.ladder or cfg.get("ladder")
    names = SUITE_NAMES if args.suite == "all" else (args.suite,)
    ok = True
    lines = []
    for name in names:
        rep = _run_suite(name, s)
        rep.write(s["out"])
        ok &= rep.passed
        lines.append(rep.summary())
        print(rep.summary())
    if len(names) > 1:
        with open(os.path.join(s["out"], "all-summary.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_ASSERT


def cmd_inpaint(args):
    from .inpainting import GrayImage, InpaintConfig, InpaintMask, hole_error, inpaint

    try:
        icfg = InpaintConfig.from_json(args.config) if args.config else InpaintConfig()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {args.config}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad inpainting config {args.config}: {exc}") from None
    if args.tol is not None:
        if not args.tol > 0:
            raise ConfigError("tol must be positive")
        icfg = dataclasses.replace(icfg, tol=args.tol)
    for path in (args.image, args.mask):
        if not os.path.isfile(path):
            raise ConfigError(f"file not found: {path}")
    try:
        image = GrayImage.read(args.image)
    except FormatError as exc:
        raise ConfigError(f"{args.image}: {exc}") from None
    try:
        mask = InpaintMask.read(args.mask)
    except FormatError as exc:
        raise ConfigError(f"{args.mask}: {exc}") from None
    if image.pixels.shape != mask.damaged.shape:
        raise ConfigError("image and mask sizes differ")
    res = inpaint(image, mask, icfg, threads=args.threads or 1)
    out = args.out or "inpainted.pgm"
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    res.image.write(out)
    base = os.path.splitext(out)[0]
    res.diagnostics.to_csv(base + "-diagnostics.csv")
    if args.truth:
        truth = GrayImage.read(args.truth)
        err = hole_error(res.image, truth, mask)
        _write_rows(base + "-error.csv", ["quantity", "value"], [["hole_mae", _g(err)]])
        print(f"hole mean absolute error {err:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="causalchar", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="JSON config; flags override its keys")
        p.add_argument("--preset", metavar="NAME", help=f"built-in problem ({', '.join(sorted(PRESETS))})")
        p.add_argument("--grid", type=int, metavar="N", help=f"grid cells per side (default {DEFAULTS['grid']})")
        p.add_argument("--out", metavar="DIR", help=f"output directory (default {DEFAULTS['out']})")
        p.add_argument("--seed", type=int, metavar="K", help=f"random seed (default {DEFAULTS['seed']})")
        p.add_argument("--threads", type=int, metavar="K", help=f"worker threads (default {DEFAULTS['threads']})")
        p.add_argument("--tol", type=float, metavar="X", help="L1 update tolerance (default 1e-8 * M*)")
        p.add_argument("--dt", type=float, metavar="X", help="integrator step in T0 units (default per preset)")
        p.add_argument("--method", choices=("rk4", "rk45"), help="integrator (default rk4)")

    p = sub.add_parser("solve-linear", help="solve a linear preset", formatter_class=fmt)
    common(p)
    p.set_defaults(func=cmd_solve_linear)

    p = sub.add_parser("solve-quasilinear", help="stripe-marching fixed-point solve", formatter_class=fmt)
    common(p)
    p.add_argument("--stripe-h", dest="stripe_h", type=float, metavar="H",
                   help=f"stripe thickness in T0 units (default {DEFAULTS['stripe_h']})")
    p.add_argument("--lam-max", dest="lam_max", type=float, metavar="L", help="last time level (default 1 - eps_stop)")
    p.set_defaults(func=cmd_solve_quasilinear)

    p = sub.add_parser("verify", help="run verification suites", formatter_class=fmt)
    p.add_argument("suite", help=f"one of {', '.join(SUITE_NAMES)}, all")
    common(p)
    p.add_argument("--ladder", type=int, nargs="+", metavar="N", help="manufactured grid ladder (default 64 128 256)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inpaint", help="fill the damaged pixels of a PGM image", formatter_class=fmt)
    p.add_argument("image", help="input PGM (P5, maxval 255)")
    p.add_argument("mask", help="mask PGM: 0 = damaged, 255 = known")
    p.add_argument("--config", metavar="PATH", help="JSON with keys q, beta_floor, rho, stripe_h, tol, integrator")
    p.add_argument("--out", metavar="PATH", default="inpainted.pgm", help="output PGM")
    p.add_argument("--truth", metavar="PATH", help="ground-truth PGM for an error report")
    p.add_argument("--tol", type=float, metavar="X", help="override the config tolerance")
    p.add_argument("--threads", type=int, default=1, metavar="K", help="worker threads")
    p.add_argument("--seed", type=int, default=0, metavar="K", help="accepted for uniformity; inpainting is deterministic")
    p.set_defaults(func=cmd_inpaint)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CausalityViolationError, MaskInvalidError) as exc:
        print(f"audit failure: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
