"""Command-line runner: ``fiocalc <subcommand> [options]``.

Every subcommand accepts ``--config run.toml``.  Top-level keys of the config
apply to any subcommand that has an option of that name; a ``[<subcommand>]``
table applies to that subcommand only.  Flags given on the command line win.

Exit codes: 0 success, 2 configuration or parse error, 3 validation or
acceptance failure, 4 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np
import tomli

from . import acceptance
from . import expr as ex
from . import fixtures as fx
from . import specfile
from .classes import PhaseSpec, SamplePlan, validate_amplitude, validate_phase, validate_symbol
from .composer import ClassValidationError, psido_reduce, pt_expand, tp_expand, tp_reduce
from .gridquant import (Grid, GridError, apply_fio, apply_psido, assemble_amplitude_op, opnorm,
                        weight_op)
from .oscoracle import OracleError, QuadPlan, eval_c_pt, eval_c_tp
from .smoothlab import ConfinementError, gaussian_family, smoothing_ratio

SCHEMA_VERSION = "1.0.0"
EXIT_OK, EXIT_CONFIG, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3, 4


def report_schema_version() -> str:
    return SCHEMA_VERSION


class SchemaWarning(UserWarning):
    pass


def read_report(path) -> dict:
    """Load a JSON artifact, warning if it was written under another schema."""
    with open(path) as fh:
        data = json.load(fh)
    if data.get("schema") != SCHEMA_VERSION:
        warnings.warn(f"{path}: schema {data.get('schema')!r} differs from {SCHEMA_VERSION}", SchemaWarning,
                      stacklevel=2)
    return data


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Subcommands; each returns (result dict, exit code, optional csv text)
# ---------------------------------------------------------------------------

def _load(path, kind):
    if path is None:
        raise CliError(f"--{kind} is required", EXIT_CONFIG)
    return specfile.load(path, kind)


def _phase(args, default: str | None = None) -> PhaseSpec:
    if getattr(args, "phase", None):
        return _load(args.phase, "phase")
    if getattr(args, "phase_fixture", None):
        return fx.phase(args.phase_fixture)
    if default:
        return fx.phase(default)
    raise CliError("--phase or --phase-fixture is required", EXIT_CONFIG)


def cmd_check(args):
    if args.spec:
        spec = specfile.load(args.spec)
        kind = specfile.kind_of(spec)
    elif args.fixture:
        kind, spec = "phase", fx.phase(args.fixture)
    else:
        raise CliError("--spec or --fixture is required", EXIT_CONFIG)
    plan = SamplePlan(n_random=args.n_random, seed=args.seed)
    if kind == "phase":
        report = validate_phase(spec, args.max_order, plan)
    elif kind == "amplitude":
        report = validate_amplitude(spec, args.max_order, plan)
    elif kind == "symbol":
        report = validate_symbol(spec, args.max_order, plan)
    else:
        result = spec.check(Grid(spec.dim, args.N, args.L), plan)
        return result, EXIT_OK if result["passed"] else EXIT_INVALID, None
    return report.to_dict(), EXIT_OK if report.passed else EXIT_INVALID, None


def cmd_expand(args):
    a = _load(args.amplitude, "amplitude")
    validate = not args.no_validate
    if args.kind == "PsDO-reduce":
        series = psido_reduce(a, args.N, validate)
    else:
        p = _load(args.symbol, "symbol")
        if args.kind == "TP":
            series = tp_expand(a, p, args.N, validate)
        elif args.kind == "PT":
            series = pt_expand(a, p, _phase(args), args.N, validate)
        else:
            series = tp_reduce(a, p, _phase(args), args.N, validate)
    return series.to_dict(), EXIT_OK, None


def cmd_oracle(args):
    a, p = _load(args.amplitude, "amplitude"), _load(args.symbol, "symbol")
    plan = QuadPlan(R=(args.R, args.R), M=args.M, eps=tuple(args.eps), tol=args.tol)
    if args.kind == "TP":
        res = eval_c_tp(a, p, args.x, args.z, args.xi, plan, args.method)
        series = tp_expand(a, p, args.N, validate=False) if args.N is not None else None
    else:
        phi = _phase(args)
        res = eval_c_pt(a, p, phi, args.x, args.z, args.xi, plan, args.method)
        series = pt_expand(a, p, phi, args.N, validate=False) if args.N is not None else None
    out = res.to_dict()
    out["point"] = {"x": args.x, "z": args.z, "xi": args.xi}
    if series is not None:
        trunc = complex(series.truncation({"x1": args.x, "z1": args.z, "xi1": args.xi}))
        out["expansion"] = {"N": args.N, "value": [trunc.real, trunc.imag], "error": abs(trunc - res.value)}
    return out, EXIT_OK if res.converged else EXIT_NONCONVERGED, None


def cmd_quantize(args):
    p = _load(args.symbol, "symbol")
    g = Grid(p.dim, args.N, args.L)
    u = g.from_expr(args.input)
    v = apply_fio(p, _phase(args), u) if (args.phase or args.phase_fixture) else apply_psido(p, u)
    out = {"grid": g.to_dict(), "input": args.input, "symbol": ex.to_string(p.expr),
           "input_norm": u.norm(), "output_norm": v.norm()}
    text = None
    if args.format == "csv":
        if g.n != 1:
            raise CliError("CSV output is available for n = 1 only", EXIT_CONFIG)
        text = _csv_text(["x", "re", "im"], zip(g.x, v.values.real, v.values.imag))
    else:
        out["values"] = [[c.real, c.imag] for c in v.values.ravel()]
    return out, EXIT_OK, text


def cmd_opnorm(args):
    a = _load(args.amplitude, "amplitude")
    phi = _phase(args, default="xxi")
    g = Grid(1, args.N, args.L)
    op = assemble_amplitude_op(a, phi, g)
    if args.s1 is not None or args.s2 is not None:
        s1, s2 = args.s1 or 0.0, args.s2 or 0.0
        m1, m2, m3 = a.orders
        op = weight_op(s1 - m1 - m2, s2 - m3, g, "x-left").compose(op).compose(
            weight_op(-s1, -s2, g, "y-left")).materialize()
    res = opnorm(op, args.iters, args.seed, args.tol)
    out = res.to_dict()
    out["history"] = res.history
    return out, EXIT_OK if res.converged else EXIT_NONCONVERGED, None


def cmd_smoothing(args):
    if args.symbol in fx.DISPERSIONS:
        a = fx.dispersion(args.symbol)
    else:
        a = _load(args.symbol, "dispersion")
    g = Grid(a.dim, args.N, args.L)
    fam, params = gaussian_family(g, args.seed, args.widths, args.centers, args.modulations)
    rep = smoothing_ratio(a, fam, args.k, args.s, args.T, args.Nt, args.seed, params)
    out = rep.to_dict()
    out["symbol"] = a.name
    text = None
    if args.csv:
        header = ["t"] + [f"datum_{i}" for i in range(len(rep.curves))]
        text = _csv_text(header, zip(rep.taus, *rep.curves))
    return out, EXIT_OK if rep.monotone else EXIT_INVALID, text


def cmd_acceptance(args):
    if args.suite != "primary":
        raise CliError(f"unknown suite {args.suite!r}", EXIT_CONFIG)
    keys = [k.strip() for k in args.only.split(",")] if args.only else None
    echo = (lambda line: print(line, file=sys.stderr)) if not args.quiet else None
    results = acceptance.run_all(keys, echo)
    out = {"suite": args.suite, "passed": all(c.passed for c in results),
           "criteria": [c.to_dict(timing=not args.no_timing) for c in results]}
    return out, EXIT_OK if out["passed"] else EXIT_INVALID, None


COMMANDS = {
    "check": cmd_check, "expand": cmd_expand, "oracle": cmd_oracle, "quantize": cmd_quantize,
    "opnorm": cmd_opnorm, "smoothing": cmd_smoothing, "acceptance": cmd_acceptance,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="fiocalc", description="Symbol calculus and quantization lab.")
    parser.add_argument("--version", action="version", version=f"fiocalc report schema {SCHEMA_VERSION}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    subs = {}

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", help="write the JSON report here (default stdout)")
        p.add_argument("--no-timing", action="store_true", help="omit wall-clock so reports are bit-identical")
        subs[name] = p
        return p

    def phase_opts(p):
        p.add_argument("--phase", help="phase spec file")
        p.add_argument("--phase-fixture", choices=sorted(fx.PHASES), help="named phase fixture")

    p = add("check", "validate a phase, amplitude, symbol or dispersion spec")
    p.add_argument("--spec", help="spec file")
    p.add_argument("--fixture", choices=sorted(fx.PHASES), help="named phase fixture")
    p.add_argument("--max-order", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-random", type=int, default=50)
    p.add_argument("--N", type=int, default=256, help="grid size for dispersion checks")
    p.add_argument("--L", type=float, default=32.0)

    p = add("expand", "symbolic composition expansion")
    p.add_argument("--kind", choices=["TP", "PT", "TP-reduce", "PsDO-reduce"], required=True)
    p.add_argument("--amplitude")
    p.add_argument("--symbol")
    phase_opts(p)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--no-validate", action="store_true")

    p = add("oracle", "oscillatory-integral value of a composed amplitude")
    p.add_argument("--kind", choices=["TP", "PT"], required=True)
    p.add_argument("--amplitude")
    p.add_argument("--symbol")
    phase_opts(p)
    p.add_argument("--x", type=float, default=0.0)
    p.add_argument("--z", type=float, default=0.0)
    p.add_argument("--xi", type=float, default=1.0)
    p.add_argument("--R", type=float, default=30.0)
    p.add_argument("--M", type=int, default=2304)
    p.add_argument("--eps", type=_floats, default=[0.4, 0.2, 0.1])
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--method", choices=["auto", "dense", "separable"], default="auto")
    p.add_argument("--N", type=int, default=None, help="also report the expansion truncated at N")

    p = add("quantize", "apply p(x,D) or a Fourier integral operator on the grid")
    p.add_argument("--symbol")
    phase_opts(p)
    p.add_argument("--N", type=int, default=128)
    p.add_argument("--L", type=float, default=16.0)
    p.add_argument("--input", default="exp(-x1^2/2)", help="input function of x")
    p.add_argument("--format", choices=["json", "csv"], default="json")

    p = add("opnorm", "largest singular value of an amplitude-form operator")
    p.add_argument("--amplitude")
    phase_opts(p)
    p.add_argument("--N", type=int, default=128)
    p.add_argument("--L", type=float, default=16.0)
    p.add_argument("--iters", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--s1", type=float, default=None, help="weighted norm H^{s1,s2} -> H^{s1-m1-m2,s2-m3}")
    p.add_argument("--s2", type=float, default=None)

    p = add("smoothing", "space-time smoothing ratios over a seeded data family")
    p.add_argument("--symbol", default="xi", help=f"fixture ({', '.join(fx.DISPERSIONS)}) or spec file")
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--T", type=float, default=fx.SMOOTHING_T)
    p.add_argument("--N", type=int, default=fx.SMOOTHING_GRID.N)
    p.add_argument("--L", type=float, default=fx.SMOOTHING_GRID.L)
    p.add_argument("--Nt", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--widths", type=int, default=5)
    p.add_argument("--centers", type=int, default=5)
    p.add_argument("--modulations", type=int, default=3)
    p.add_argument("--csv", help="write per-t saturation curves here")

    p = add("acceptance", "run the acceptance battery")
    p.add_argument("--suite", default="primary")
    p.add_argument("--only", help="comma-separated criteria, e.g. AC1,AC7")
    p.add_argument("--quiet", action="store_true")
    return parser, subs


def _apply_config(argv: list[str], subs: dict) -> list[str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    try:
        with open(known.config, "rb") as fh:
            cfg = tomli.load(fh)
    except OSError as err:
        raise CliError(f"cannot read config {known.config}: {err.strerror}", EXIT_CONFIG) from err
    except tomli.TOMLDecodeError as err:
        raise CliError(f"{known.config}: {err}", EXIT_CONFIG) from err
    command = cfg.pop("subcommand", None)
    if command and not any(a in COMMANDS for a in argv):
        argv = [command] + argv
    top = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    for name, p in subs.items():
        dests = {a.dest for a in p._actions}
        table = cfg.get(name, {})
        merged = {k.replace("-", "_"): v for k, v in top.items() if k.replace("-", "_") in dests}
        unknown = [k for k in table if k.replace("-", "_") not in dests]
        if unknown:
            raise CliError(f"unknown keys in [{name}]: {unknown}", EXIT_CONFIG)
        merged.update({k.replace("-", "_"): v for k, v in table.items()})
        p.set_defaults(**merged)
    stray = [k for k in top if not any(k.replace("-", "_") in {a.dest for a in p._actions} for p in subs.values())]
    if stray:
        raise CliError(f"unknown config keys: {stray}", EXIT_CONFIG)
    return argv


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    start = time.perf_counter()
    try:
        argv = _apply_config(argv, subs)
        try:
            args = parser.parse_args(argv)
        except SystemExit as err:
            return int(err.code or 0)
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        result, code, text = COMMANDS[args.command](args)
    except CliError as err:
        print(f"fiocalc: {err}", file=sys.stderr)
        return err.code
    except ClassValidationError as err:
        print(f"fiocalc: validation failed: {err}", file=sys.stderr)
        return EXIT_INVALID
    except ConfinementError as err:
        print(f"fiocalc: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (specfile.SpecFileError, ex.ExprError, OracleError, GridError, ValueError, KeyError) as err:
        print(f"fiocalc: {err}", file=sys.stderr)
        return EXIT_CONFIG
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "no_timing")}
    report = {"schema": SCHEMA_VERSION, "command": args.command, "config": config, "exit_code": code,
              "result": result}
    if not args.no_timing:
        report["wall_clock_seconds"] = time.perf_counter() - start
    body = json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
    csv_path = getattr(args, "csv", None)
    if text is not None and not csv_path and args.out:
        csv_path = str(Path(args.out).with_suffix(".csv"))
    if args.out:
        atomic_write(args.out, body)
    elif text is None or csv_path:
        sys.stdout.write(body)
    if text is not None:
        if csv_path:
            atomic_write(csv_path, text)
        else:
            sys.stdout.write(text)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
