"""Command-line front end.

    proxybounds bound --input eps04.json --direction lower --trace t.csv
    proxybounds ace --input ace.json --direction upper
    proxybounds oracle --input eps04.json --grid 1e-3
    proxybounds check-tightness --input eps04.json
    proxybounds validate --input problem.json
    proxybounds simulate --seed 3 --output sim.json

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 empty
feasible region.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import ace, engine, lp, tightness
from .config import DEFAULT_MAX_ITER, DEFAULT_RESTARTS
from .errors import (EmptyFeasibleRegion, MissingOutcomeValues, ParseError, ProxyBoundsError,
                     ShapeMismatch, UnsupportedDimension, ValidationError)
from .model import PhiVector, build_ir_phi, dump_problem, load_problem, simulate_forward

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_EMPTY = 0, 1, 2, 3
SIMULATE_DIMS = (2, 2, 2)
SIMULATE_WIDENING = 0.1

_INVALID = (ParseError, ValidationError, MissingOutcomeValues, ShapeMismatch,
            UnsupportedDimension)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proxybounds", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    specs = {
        "bound": "bound f(y|do(x)) by branch and bound",
        "ace": "bound the weighted average causal effect",
        "oracle": "grid-search the program (d = 2 only)",
        "check-tightness": "search for a witness that the bound is attained",
        "validate": "load a problem and report its invariants",
        "simulate": "write a forward-simulated problem with its ground truth",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--input", type=Path, required=name != "simulate")
        p.add_argument("--direction", choices=("lower", "upper"), default="lower")
        p.add_argument("--delta", type=float, default=1e-3,
                       help="stop once the certified error is at most this")
        p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
        p.add_argument("--trace", type=Path, help="write the iteration trace CSV here")
        p.add_argument("--output", type=Path, help="write a JSON result here")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--no-prune", action="store_true")
        p.add_argument("--grid", type=float, default=1e-3)
        p.add_argument("--threads", type=int, default=1)
    return parser


def _config(args) -> dict:
    return {
        "command": args.command,
        "input": None if args.input is None else str(args.input),
        "direction": args.direction,
        "delta": args.delta,
        "max_iter": args.max_iter,
        "prune": not args.no_prune,
        "grid": args.grid,
        "threads": args.threads,
    }


def _check_args(args):
    if not args.delta > 0:
        raise ValidationError("--delta must be positive")
    if args.max_iter < 1:
        raise ValidationError("--max-iter must be at least 1")
    if args.threads < 1:
        raise ValidationError("--threads must be at least 1")
    if not args.grid > 0:
        raise ValidationError("--grid must be positive")


def _load(args):
    try:
        data = args.input.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {args.input}: {exc.strerror}") from exc
    return load_problem(data), data


def _phi_json(phi: Optional[PhiVector]):
    if phi is None:
        return None
    return {"theta": phi.theta.tolist(), "psi": phi.psi.tolist(), "omega": phi.omega.tolist()}


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _report_result(res: engine.BoundResult, args, out):
    print(f"bound={res.bound:.10f}", file=out)
    print(f"certified_error={res.certified_error:.6g}", file=out)
    print(f"geometric_factor={res.geometric_factor:.6g}", file=out)
    print(f"L_n={res.L_n}", file=out)
    print(f"incumbent={res.incumbent:.10f}", file=out)
    print(f"iterations={res.iterations}", file=out)
    print(f"stop={res.stop_reason}", file=out)
    config = _config(args)
    if args.trace is not None:
        comments = [f"seed={args.seed}", "config=" + json.dumps(config, sort_keys=True)]
        with open(args.trace, "w", newline="") as fh:
            engine.write_trace(res.trace, fh, comments)
        from .report import figure_path, plot_trace

        plot_trace(res.trace, figure_path(args.trace),
                   title=f"{args.command} {args.direction}")
    if args.output is not None:
        points = [] if res.incumbent_point is None else [_phi_json(p) for p in res.incumbent_point]
        _write_json(args.output, {
            "direction": res.direction,
            "bound": res.bound,
            "certified_error": res.certified_error,
            "geometric_factor": res.geometric_factor,
            "A": res.A,
            "dia0": res.dia0,
            "L_n": res.L_n,
            "iterations": res.iterations,
            "stop_reason": res.stop_reason,
            "incumbent": res.incumbent,
            "incumbent_point": points,
            "seed": args.seed,
            "config": config,
        })


def _cmd_bound(args, out):
    spec, _ = _load(args)
    res = engine.run(spec, args.direction, tol_delta=args.delta, max_iter=args.max_iter,
                     prune_nodes=not args.no_prune, threads=args.threads)
    _report_result(res, args, out)


def _cmd_ace(args, out):
    spec, _ = _load(args)
    res = ace.bound_ace(spec, None, args.direction, tol=args.delta, max_iter=args.max_iter,
                        prune_nodes=not args.no_prune, threads=args.threads)
    _report_result(res, args, out)


def _fmt_step(x: float) -> str:
    mant, exp = f"{x:.0e}".split("e")
    return f"{mant}e{int(exp)}"


def _cmd_oracle(args, out):
    spec, _ = _load(args)
    value, phi = engine.brute_force(spec, args.grid, args.direction)
    if phi is None:
        raise EmptyFeasibleRegion("no grid point satisfies the constraints")
    print(f"{value:.3f} ± {_fmt_step(2 * args.grid)}", file=out)
    if args.output is not None:
        _write_json(args.output, {"direction": args.direction, "value": value,
                                  "argmin": _phi_json(phi), "seed": args.seed,
                                  "config": _config(args)})


def _cmd_tightness(args, out):
    spec, raw = _load(args)
    given = json.loads(raw).get("phi")
    if given is not None:
        try:
            phi = PhiVector(*(np.asarray(given[k], dtype=float) for k in ("theta", "psi", "omega")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"phi: expected theta, psi and omega arrays ({exc})") from exc
        source = "given"
    else:
        res = engine.run(spec, args.direction, tol_delta=args.delta, max_iter=args.max_iter,
                         prune_nodes=not args.no_prune, threads=args.threads)
        phi = res.optimizer
        if phi is None:
            raise EmptyFeasibleRegion("the search found no feasible point")
        print(f"bound={res.bound:.10f}", file=out)
        source = "computed"
    witness = tightness.find_witness(phi, spec, DEFAULT_RESTARTS, seed=args.seed)
    print(f"phi ({source}): theta={phi.theta.tolist()} psi={phi.psi.tolist()} "
          f"omega={phi.omega.tolist()}", file=out)
    print("tight-certified" if witness is not None else "unknown", file=out)
    if args.output is not None:
        _write_json(args.output, {
            "status": "tight-certified" if witness is not None else "unknown",
            "phi": _phi_json(phi),
            "witness": None if witness is None else json.loads(witness.to_json()),
            "seed": args.seed,
            "config": _config(args),
        })


def _cmd_validate(args, out):
    spec, _ = _load(args)
    ir = build_ir_phi(spec)
    point = lp.feasible_point(ir.A, ir.senses, ir.b, ir.lower, ir.upper)
    print(f"dims: u={spec.d} w={spec.n_w} x={spec.n_x}", file=out)
    print(f"target_x={spec.target_x}", file=out)
    print(f"f(y,X=x)={spec.f_yx:.6g} f(X=x)={spec.f_x:.6g} f(X!=x)={spec.f_notx:.6g}", file=out)
    print(f"psi_min={spec.psi_min:.6g}", file=out)
    print(f"outcome values: {'present' if spec.y_values is not None else 'absent'}", file=out)
    if point is None:
        raise EmptyFeasibleRegion("no phi satisfies the constraint set")
    print("constraint set: nonempty", file=out)
    print("valid", file=out)


def _cmd_simulate(args, out):
    if args.output is None:
        raise ValidationError("simulate needs --output")
    rng = np.random.default_rng(args.seed)
    inst = simulate_forward(rng, SIMULATE_DIMS, SIMULATE_WIDENING)
    payload = json.loads(dump_problem(inst.spec))
    payload["truth"] = inst.truth
    payload["transition"] = inst.transition.tolist()
    payload["seed"] = args.seed
    payload["config"] = {"dims": list(SIMULATE_DIMS), "widening": SIMULATE_WIDENING}
    _write_json(args.output, payload)
    print(f"truth={inst.truth:.10f}", file=out)


_COMMANDS = {
    "bound": _cmd_bound,
    "ace": _cmd_ace,
    "oracle": _cmd_oracle,
    "check-tightness": _cmd_tightness,
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
}


def main(argv: Optional[List[str]] = None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    try:
        _check_args(args)
        _COMMANDS[args.command](args, out)
    except _INVALID as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    except EmptyFeasibleRegion as exc:
        print(f"error: empty feasible region: {exc}", file=err)
        return EXIT_EMPTY
    except ProxyBoundsError as exc:
        print(f"error: numerical failure: {exc}", file=err)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        print(f"error: numerical failure: {exc}", file=err)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    return EXIT_OK


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
