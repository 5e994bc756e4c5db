"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 arbitrage found, 3 violated
hypothesis (for example an expected-utility problem with a utility that
is bounded below).  Reports are JSON with sorted keys, so identical inputs
give byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import DEFAULT_CONFIG, SolverConfig
from .cpt_solver import optimize_cpt
from .dp_solver import indirect_utility_curve, solve
from .errors import ArbitrageError, HypothesisError, NCPError
from .no_arbitrage import analyze
from .phenomena import closedness_probe, nonexistence_sweep, weak_convergence_ladder
from .preferences import CPTPreference, EUPreference, make_builtin_utility, preference_from_dict
from .tree import tree_from_dict, validate_tree

EXIT_OK, EXIT_INPUT, EXIT_ARBITRAGE, EXIT_HYPOTHESIS = 0, 1, 2, 3


class InputError(Exception):
    """Bad command-line input; mapped to exit code 1."""


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples into JSON data."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(report) -> str:
    return json.dumps(jsonable(report), sort_keys=True, indent=2) + "\n"


# -- input parsing ---------------------------------------------------------
def read_json(path: str | None, what: str):
    if path is None:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {path}")
    text = p.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def parse_z_range(text: str) -> np.ndarray:
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise InputError(f"--z-range expects a:b:step, got {text!r}") from None
    if not all(math.isfinite(v) for v in (a, b, step)) or step <= 0 or b < a:
        raise InputError(f"--z-range needs finite a <= b and step > 0, got {text!r}")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return a + step * np.arange(count)


def parse_tolerances(items: list[str], seed: int | None) -> SolverConfig:
    overrides: dict[str, str | int] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep:
            raise InputError(f"--tol expects key=value, got {item!r}")
        overrides[key] = raw
    if seed is not None:
        overrides["seed"] = seed
    try:
        return DEFAULT_CONFIG.with_overrides(overrides)
    except KeyError as exc:
        raise InputError(exc.args[0]) from None
    except ValueError:
        raise InputError(f"--tol values must be numeric, got {items}") from None


def thread_cap() -> int | None:
    raw = os.environ.get("NCP_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"NCP_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise InputError(f"NCP_THREADS must be a positive integer, got {raw!r}")
    return n


def load_inputs(args, need_pref: bool = True):
    try:
        tree, claim = tree_from_dict(read_json(args.tree, "tree"))
        pref = preference_from_dict(read_json(args.pref, "pref")) if need_pref else None
    except NCPError as exc:
        raise InputError(str(exc)) from None
    report = validate_tree(tree)
    if not report.ok:
        raise InputError("invalid tree: " + "; ".join(report.problems))
    return tree, claim, pref


def emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def emit_csv(header, rows, out: str | None) -> None:
    if out is None:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# -- commands --------------------------------------------------------------
def cmd_check_na(args, config) -> int:
    tree, _, _ = load_inputs(args, need_pref=False)
    report = analyze(tree, config)
    emit(dumps(report.to_dict()), args.out)
    return EXIT_OK if report.na else EXIT_ARBITRAGE


def _distorted(pref) -> bool:
    return isinstance(pref, CPTPreference) and not (pref.w_plus.is_identity and pref.w_minus.is_identity)


def cmd_solve(args, config) -> int:
    tree, claim, pref = load_inputs(args)
    na = analyze(tree, config)
    if not na.na:
        emit(dumps({"error": "arbitrage", "na": na.to_dict()}), args.out)
        return EXIT_ARBITRAGE
    if isinstance(pref, EUPreference):
        report = solve(tree, pref, claim, args.z, config, na).to_dict()
        report["kind"] = "eu"
    else:
        report = optimize_cpt(tree, pref, claim, args.z, config, na).to_dict()
        report["kind"] = "cpt"
        report["z"] = args.z
    emit(dumps(report), args.out)
    return EXIT_OK


def cmd_curve(args, config) -> int:
    if args.z_range is None:
        raise InputError("curve needs --z-range a:b:step")
    z = parse_z_range(args.z_range)
    tree, claim, pref = load_inputs(args)
    na = analyze(tree, config)
    if not na.na:
        emit(dumps({"error": "arbitrage", "na": na.to_dict()}), args.out)
        return EXIT_ARBITRAGE
    if _distorted(pref):
        # no dynamic programming with distortions: one global search per z
        vals = np.array([optimize_cpt(tree, pref, claim, float(x), config, na).value.v for x in z])
        diffs = np.diff(vals)
        report = {
            "z": z,
            "value": vals,
            "monotone": bool(np.all(diffs >= -config.tol_solve)),
            "max_jump": float(np.max(np.abs(diffs), initial=0.0)),
        }
    else:
        report = indirect_utility_curve(tree, pref, claim, z, config).to_dict()
    emit(dumps(report), args.out)
    return EXIT_OK


def _ints(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise InputError(f"expected positive integers, got {text!r}")
    return vals


def cmd_demo(args, config) -> int:
    name = args.name
    if name == "nonexistence":
        if args.pref is not None:
            try:
                pref = preference_from_dict(read_json(args.pref, "pref"))
            except NCPError as exc:
                raise InputError(str(exc)) from None
            if not isinstance(pref, EUPreference):
                raise InputError("the nonexistence demo takes an 'eu' preference")
            u = pref.utility
        else:
            u = make_builtin_utility("bounded_below", {"a": 0.5})
        sweep = nonexistence_sweep(u, np.linspace(0.0, args.phi_max, args.points), args.p_up)
        emit_csv(("phi", "value", "gap"), sweep.rows(), args.out)
        return EXIT_OK
    if name == "ladder":
        rows = weak_convergence_ladder(_ints(args.n))
        emit_csv(("n", "distance"), rows, args.out)
        return EXIT_OK
    if name == "closedness":
        if args.K < 1:
            raise InputError("--K must be >= 1")
        report = closedness_probe(args.K, _ints(args.n))
        emit_csv(("strategy", "k", "c_k", "target", "residual"), report.residual_rows(), args.out)
        ladder_out = None
        if args.out is not None:
            out = Path(args.out)
            ladder_out = str(out.with_name(out.stem + "_ladder" + out.suffix))
        emit_csv(("n", "distance"), report.ladder, ladder_out)
        return EXIT_OK
    raise InputError(f"unknown demo {name!r}; choose nonexistence, ladder or closedness")


# -- entry point -----------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tree", help="scenario tree JSON")
    common.add_argument("--pref", help="preference JSON")
    common.add_argument("--z", type=float, default=0.0, help="initial capital")
    common.add_argument("--z-range", dest="z_range", help="a:b:step grid of initial capitals")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--tol", action="append", default=[], metavar="KEY=VAL",
                        help="solver setting override, repeatable")

    parser = argparse.ArgumentParser(prog="ncp", description="Non-concave portfolio optimisation on scenario trees.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check-na", parents=[common], help="no-arbitrage verdict and constants")
    sub.add_parser("solve", parents=[common], help="optimal strategy for one initial capital")
    sub.add_parser("curve", parents=[common], help="indirect utility over a capital grid")
    demo = sub.add_parser("demo", parents=[common], help="reproduce a negative result as CSV")
    demo.add_argument("name", help="nonexistence | ladder | closedness")
    demo.add_argument("--n", default="1,2,4,8,16,32,64", help="comma-separated ladder sizes")
    demo.add_argument("--K", type=int, default=4, help="truncation of the counterexample market")
    demo.add_argument("--phi-max", dest="phi_max", type=float, default=20.0)
    demo.add_argument("--points", type=int, default=41)
    demo.add_argument("--p-up", dest="p_up", type=float, default=0.5)
    return parser


COMMANDS = {"check-na": cmd_check_na, "solve": cmd_solve, "curve": cmd_curve, "demo": cmd_demo}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        thread_cap()
        config = parse_tolerances(args.tol, args.seed)
        return COMMANDS[args.command](args, config)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ArbitrageError as exc:
        print(f"arbitrage: {exc}", file=sys.stderr)
        return EXIT_ARBITRAGE
    except HypothesisError as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (NCPError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
