"""Command-line interface.

Exit codes: 0 success, 1 a verification suite failed, 2 usage or domain error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import harness, io, spectral, suites, tap
from .errors import BrayMooreError, DegenerateError
from .matrices import default_goe_scale
from .spectral import FreeConvolution, SpectralMeasure

DEFAULT_SEED = harness.DEFAULT_SEED


class UsageError(Exception):
    pass


def _seed(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from exc


def _n_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid N list {text!r}") from exc


def _common(p: argparse.ArgumentParser, *groups: str):
    add = p.add_argument
    add("--config", help="flat key = value file supplying defaults for any flag")
    add("--out", help="output file (stdout when omitted)")
    add("--format", choices=("json", "csv", "text"), default=None)
    if "tap" in groups:
        add("--m-file", help="m vector: JSON array or one number per line")
        add("--beta", type=float)
        add("--h", type=float)
        add("--alpha", type=float)
    if "spectral" in groups:
        add("--atoms", help='JSON file {"atoms": [[location, weight], ...]}')
        add("--sigma2", type=float, help="semicircle variance (default 2 beta^2)")
    if "mc" in groups:
        add("--n", type=int)
        add("--samples", type=int)
        add("--seed", type=_seed, help=f"master seed (default {DEFAULT_SEED:#x})")
        add("--goe-scale", type=float, help="sampler scale s in s J / sqrt(N) (default sqrt(2) beta)")
        add("--timing", action="store_true", help="include wall-clock time in records")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="braymoore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("freeconv", help="density grid and log-potential of nu boxplus sc(sigma2)")
    _common(p, "spectral")
    p.add_argument("--beta", type=float)
    p.add_argument("--grid", type=int, default=None, help="number of grid points (default 201)")

    p = sub.add_parser("upsilon", help="variational formula for a TAP point")
    _common(p, "tap")

    p = sub.add_parser("predict", help="leading term plus correction for a TAP point")
    _common(p, "tap")

    p = sub.add_parser("simulate", help="Monte Carlo log-determinant estimate")
    _common(p, "tap", "spectral", "mc")
    p.add_argument("--mode", choices=("tap", "theorem2"))
    p.add_argument("--route", choices=("direct", "y"), default=None)

    p = sub.add_parser("sweep", help="residual versus N for a fixed magnetisation pattern")
    _common(p, "tap", "mc")
    p.add_argument("--n-list", type=_n_list)
    p.add_argument("--pattern", choices=harness.PATTERNS)
    p.add_argument("--t", type=float, help="pattern amplitude")

    p = sub.add_parser("verify", help="run property suites")
    _common(p)
    p.add_argument("--suite", action="append", help=f"suite name (repeatable): {', '.join(suites.SUITES)}")
    p.add_argument("--inject-failure", action="append", default=[],
                   help="corrupt the named suite's input (exercises the failure path)")

    p = sub.add_parser("calibrate", help="choose the semicircle variance matching the sampler")
    _common(p, "mc")
    p.add_argument("--beta", type=float)
    return parser


_DEFAULTS = {"beta": 1.0, "h": 0.0, "alpha": 1.0, "samples": 200, "seed": DEFAULT_SEED,
             "format": "text", "grid": 201, "route": "direct", "pattern": "cosine", "t": 0.5}


def _apply_config(args: argparse.Namespace) -> None:
    if getattr(args, "config", None):
        cfg = io.parse_config(io.read_text(args.config))
        conv = {"beta": float, "h": float, "alpha": float, "sigma2": float, "goe_scale": float,
                "n": int, "samples": int, "seed": _seed, "grid": int, "t": float,
                "n_list": _n_list}
        for key, raw in cfg.items():
            if not hasattr(args, key):
                raise UsageError(f"config key {key!r} is not an option of '{args.command}'")
            if getattr(args, key) is None:
                try:
                    setattr(args, key, conv.get(key, str)(raw))
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"config key {key!r}: bad value {raw!r}") from exc
    for key, val in _DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, val)


def _emit(args, text: str) -> None:
    if args.out:
        try:
            Path(args.out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    else:
        sys.stdout.write(text)


def _text_lines(pairs) -> str:
    return "".join(f"{k} {io.fmt(v) if not isinstance(v, str) else v}\n" for k, v in pairs)


def _tap_point(args) -> tap.TapPoint:
    if not args.m_file:
        raise UsageError("--m-file is required")
    return tap.make_tap_point(io.read_m_vector(args.m_file), args.beta, args.h)


def _sigma2(args) -> float:
    return args.sigma2 if args.sigma2 is not None else 2.0 * args.beta**2


def cmd_freeconv(args) -> int:
    if not args.atoms:
        raise UsageError("--atoms is required")
    fc = FreeConvolution(io.read_atoms(args.atoms), _sigma2(args))
    supp = fc.support()
    lo, hi = supp[0][0], supp[-1][1]
    pad = 0.05 * (hi - lo)
    xs = np.linspace(lo - pad, hi + pad, args.grid)
    dens = spectral.boundary_density(fc, xs)
    lp = spectral.log_potential(fc)
    if args.format == "csv":
        body = "x,density\n" + "".join(f"{io.fmt(x)},{io.fmt(d)}\n" for x, d in zip(xs, dens))
        sys.stderr.write(f"log_potential {io.fmt(lp)}\n")
    elif args.format == "json":
        body = io.dumps({"sigma2": fc.sigma2, "log_potential": lp,
                         "support": [list(iv) for iv in supp],
                         "x": xs.tolist(), "density": dens.tolist()}) + "\n"
    else:
        body = _text_lines([("sigma2", fc.sigma2), ("log_potential", lp)])
        body += "".join(f"support {io.fmt(a)} {io.fmt(b)}\n" for a, b in supp)
        body += "x density\n" + "".join(f"{io.fmt(x)} {io.fmt(d)}\n" for x, d in zip(xs, dens))
    _emit(args, body)
    return 0


def _emit_mapping(args, d: dict) -> None:
    if args.format == "json":
        _emit(args, io.dumps(d) + "\n")
    elif args.format == "csv":
        keys = list(d)
        vals = [v if isinstance(v, str) else io.fmt(v) for v in d.values()]
        _emit(args, ",".join(keys) + "\n" + ",".join(vals) + "\n")
    else:
        _emit(args, _text_lines(d.items()))


def cmd_upsilon(args) -> int:
    p = _tap_point(args)
    r = tap.solve_upsilon(p)
    _emit_mapping(args, {"upsilon": r.upsilon, "g_star": r.g_star, "branch": r.branch,
                         "plefka_lhs": r.plefka_lhs})
    return 0


def cmd_predict(args) -> int:
    p = _tap_point(args)
    pr = tap.predict(p, args.alpha)
    _emit_mapping(args, {"upsilon": pr.upsilon, "correction": pr.correction, "total": pr.total,
                         "g_star": pr.g_star, "branch": pr.branch, "plefka_lhs": pr.plefka_lhs,
                         "region": pr.region, "class": pr.cls, "degenerate": pr.degenerate})
    return 0


def _emit_records(args, records) -> None:
    if args.format == "csv":
        _emit(args, io.records_csv(records))
    elif args.format == "json":
        _emit(args, "".join(io.record_jsonl(r, args.timing) + "\n" for r in records))
    else:
        lines = []
        for r in records:
            lines.extend(f"{k} {io.fmt(v) if not isinstance(v, str) else v}"
                         for k, v in r.as_dict(args.timing).items())
            lines.append("")
        _emit(args, "\n".join(lines))


def cmd_simulate(args) -> int:
    if args.samples is None or args.samples < 2:
        raise UsageError("--samples must be at least 2")
    mode = args.mode or ("tap" if args.m_file else "theorem2")
    if mode == "tap":
        p = _tap_point(args)
        pred = tap.predict(p, args.alpha).total
        rec = harness.estimate_logdet(p, args.samples, args.seed, args.goe_scale, args.route, pred)
    else:
        if args.n is None or args.n < 2:
            raise UsageError("--n (at least 2) is required in theorem2 mode")
        nu = io.read_atoms(args.atoms) if args.atoms else SpectralMeasure.point(0.0)
        d = harness.diag_from_measure(nu, args.n)
        s = args.goe_scale if args.goe_scale is not None else (
            math.sqrt(args.sigma2) if args.sigma2 is not None else default_goe_scale(args.beta))
        rep = harness.verify_theorem2(d, None, args.n, args.samples, args.seed, s)
        rec = rep.record
    _emit_records(args, [rec])
    return 0


def cmd_sweep(args) -> int:
    if not args.n_list:
        raise UsageError("--n-list must name at least one N")
    try:
        plan = harness.SweepPlan(args.n_list, args.samples, args.pattern, args.t, args.beta,
                                 args.h, args.alpha, args.goe_scale, args.seed, args.out)
    except BrayMooreError as exc:
        raise UsageError(str(exc)) from exc
    if args.out:
        stem = Path(args.out)
        jsonl = stem.with_suffix(".jsonl")
        try:
            jsonl.write_text("", encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot write {jsonl}: {exc.strerror or exc}") from exc

        def writer(rec):
            with jsonl.open("a", encoding="utf-8") as fh:
                fh.write(io.record_jsonl(rec, args.timing) + "\n")

        result = harness.run_sweep(plan, writer)
        stem.with_suffix(".csv").write_text(io.records_csv(result.records), encoding="utf-8")
        for n, err in result.errors:
            sys.stderr.write(f"N={n}: {err}\n")
        sys.stdout.write(io.records_csv(result.records))
    else:
        result = harness.run_sweep(plan)
        _emit_records(args, result.records)
    return 0


def cmd_verify(args) -> int:
    names = []
    for item in args.suite or []:
        names.extend(s.strip() for s in item.split(",") if s.strip())
    inject = {s.strip() for item in args.inject_failure for s in item.split(",")}
    bad = sorted((set(names) | inject) - set(suites.SUITES))
    if bad:
        raise UsageError(f"unknown suite(s): {', '.join(bad)}")
    results = suites.run_suites(names or None, inject)
    if args.format == "json":
        _emit(args, "".join(io.dumps({"suite": r.name, "passed": r.passed, "checked": r.checked,
                                      "failures": r.failures, "detail": r.detail}) + "\n"
                            for r in results))
    else:
        lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name} ({r.checked} checked, "
                 f"{r.failures} failed){' ' + r.detail if r.detail else ''}" for r in results]
        failed = [r.name for r in results if not r.passed]
        lines.append(f"{len(results) - len(failed)}/{len(results)} suites passed"
                     + (f"; failing invariant(s): {', '.join(failed)}" if failed else ""))
        _emit(args, "\n".join(lines) + "\n")
    return 0 if all(r.passed for r in results) else 1


def cmd_calibrate(args) -> int:
    n = args.n or 256
    samples = args.samples if args.samples is not None and args.samples != _DEFAULTS["samples"] else 16
    r = harness.calibrate_sigma(args.beta, n, samples, args.seed, args.goe_scale)
    ks = {f"ks_{io.fmt(k)}": v for k, v in r.ks.items()}
    _emit_mapping(args, {"selected_sigma2": r.selected, **ks, "second_moment": r.second_moment,
                         "edge_lo": r.mean_edges[0], "edge_hi": r.mean_edges[1],
                         "inconclusive": r.inconclusive, "vardet_consistent": r.vardet_consistent})
    return 0


COMMANDS = {"freeconv": cmd_freeconv, "upsilon": cmd_upsilon, "predict": cmd_predict,
            "simulate": cmd_simulate, "sweep": cmd_sweep, "verify": cmd_verify,
            "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config(args)
        return COMMANDS[args.command](args)
    except (UsageError, BrayMooreError) as exc:
        if isinstance(exc, DegenerateError):
            sys.stderr.write(f"degenerate input: {exc}\n")
        else:
            sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
