"""Command-line interface: ``dpassivity <subcommand> --case PATH [...]``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .case import CaseParseError, CaseValidationError, load_case
from .criteria import AssessmentError, run_two_level_assessment
from .devices import DomainError
from .harness import (EXIT_NUMERICAL, EXIT_VALIDATION, BoundarySpec, PipelineError,
                      SweepAxis, SweepSpec, analyze, boundary, solve_operating_point,
                      sweep, write_boundary_csv, write_sweep_csv)
from .network import PowerFlowError, solve_power_flow
from .oracle import OracleError
from .sim import (GroundFault, Scenario, SimulationError, StatePerturbation, format_number,
                  simulate, write_trajectory_csv)

SETTLE_FRACTION = 0.01
SETTLE_FLOOR = 1e-6


class UsageError(ValueError):
    pass


def _emit_json(obj, out=None):
    text = json.dumps(obj, indent=2, allow_nan=True)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load(args):
    if args.format == "matpower" and not args.devices:
        raise UsageError("--format matpower needs --devices (bus -> device assignment)")
    return load_case(args.case, args.format, args.devices)


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args):
    report = analyze(_load(args))
    if args.json:
        _emit_json(report.to_dict(), args.out)
    else:
        print("\n".join(report.lines()))
        if args.out:
            _emit_json(report.to_dict(), args.out)
    return 0


def cmd_powerflow(args):
    case = _load(args)
    try:
        pf = solve_power_flow(case)
    except PowerFlowError as exc:
        raise PipelineError("powerflow", str(exc)) from exc
    rows = [{"bus": b.id, "kind": b.bus_kind, "V": float(pf.V[k]),
             "theta": float(pf.theta[k]), "P": float(pf.P[k]), "Q": float(pf.Q[k])}
            for k, b in enumerate(case.buses)]
    if args.json:
        _emit_json({"iterations": pf.iterations, "residual": pf.residual, "buses": rows},
                   args.out)
        return 0
    print(f"converged in {pf.iterations} iterations, residual {pf.residual:.3e}")
    print(f"{'bus':>5} {'kind':>8} {'V':>10} {'theta':>11} {'P':>11} {'Q':>11}")
    for r in rows:
        print(f"{r['bus']:>5} {r['kind']:>8} {r['V']:>10.6f} {r['theta']:>11.6f} "
              f"{r['P']:>11.6f} {r['Q']:>11.6f}")
    if args.out:
        lines = ["bus,kind,V,theta,P,Q"]
        lines += [",".join([str(r["bus"]), r["kind"]]
                           + [format_number(r[k]) for k in ("V", "theta", "P", "Q")])
                  for r in rows]
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def cmd_assess(args):
    op = solve_operating_point(_load(args))
    report = run_two_level_assessment(op, args.mode)
    _emit_json(report.to_dict(), args.out)
    return 0


def cmd_sweep(args):
    case = _load(args)
    spec = SweepSpec(SweepAxis.parse(args.axis1), SweepAxis.parse(args.axis2),
                     tuple(v.strip() for v in args.verdicts.split(",")))
    rows = sweep(case, spec, workers=args.workers)
    text = write_sweep_csv(spec, rows, args.out)
    if args.json:
        _emit_json({"axis1": spec.axis1.path, "axis2": spec.axis2.path,
                    "columns": ["p1", "p2", *spec.verdict_set],
                    "rows": [list(r) for r in rows]})
    elif args.out is None:
        sys.stdout.write(text)
    return 0


def cmd_boundary(args):
    case = _load(args)
    spec = BoundarySpec(args.s_min, args.s_max, args.samples, tol=args.tol,
                        max_iter=args.max_iter)
    rows = boundary(case, spec, workers=args.workers)
    text = write_boundary_csv(rows, args.out)
    if args.json:
        _emit_json([{"s": r.s, "level_semi": r.level_semi, "level_eigen": r.level_eigen,
                     "note": r.note} for r in rows])
    elif args.out is None:
        sys.stdout.write(text)
    return 0


def _parse_perturb(text):
    try:
        bus, channel, mag = text.split(":")
        return StatePerturbation(int(bus), channel, float(mag))
    except ValueError:
        raise UsageError(f"--perturb {text!r}: expected BUS:CHANNEL:MAGNITUDE") from None


def _parse_fault(text):
    parts = text.split(":")
    try:
        if len(parts) not in (3, 4):
            raise ValueError
        t_off = float(parts[3]) if len(parts) == 4 else None
        return GroundFault(int(parts[0]), float(parts[1]), float(parts[2]), t_off)
    except ValueError:
        raise UsageError(f"--fault {text!r}: expected BUS:R_FAULT:T_ON[:T_OFF]") from None


def cmd_simulate(args):
    case = _load(args)
    dist = [_parse_perturb(p) for p in args.perturb] + [_parse_fault(f) for f in args.fault]
    for d in dist:
        if d.bus not in case.devices and isinstance(d, StatePerturbation):
            raise UsageError(f"--perturb: bus {d.bus} has no device")
        if d.bus not in case.bus_ids:
            raise UsageError(f"disturbance at unknown bus {d.bus}")
    try:
        scenario = Scenario(args.t_end, args.dt_max, tuple(dist), args.sample_dt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    op = solve_operating_point(case)
    try:
        traj = simulate(op, scenario)
    except (SimulationError, DomainError) as exc:
        raise PipelineError("simulate", str(exc)) from exc
    if args.out:
        write_trajectory_csv(traj, args.out)
    dev = traj.deviation()
    max_dev = float(dev.max())
    final = float(dev[-1])
    summary = {"t_end": float(traj.times[-1]), "samples": int(traj.times.size),
               "max_deviation": max_dev, "final_deviation": final,
               "settled": bool(final <= SETTLE_FLOOR + SETTLE_FRACTION * max_dev)}
    if args.json:
        _emit_json(summary)
    else:
        print(f"max deviation {max_dev:.6g}, final deviation {final:.6g}, "
              f"settled: {'yes' if summary['settled'] else 'no'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--case", required=True, help="case file")
    p.add_argument("--format", choices=("native", "matpower"), default="native")
    p.add_argument("--devices", help="device assignment JSON (bus id -> device)")
    p.add_argument("--out", help="output file")
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpassivity",
        description="Small-signal stability certificates from differential passivity indices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="full pipeline with all three verdicts")
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("powerflow", help="solve the power flow only")
    _common(p)
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("assess", help="two-level assessment protocol as JSON")
    _common(p)
    p.add_argument("--mode", choices=("semi", "fully"), default="semi")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("sweep", help="2-D parameter grid of verdict codes")
    _common(p)
    p.add_argument("--axis1", required=True, metavar="PATH:START:STOP:STEPS")
    p.add_argument("--axis2", required=True, metavar="PATH:START:STOP:STEPS")
    p.add_argument("--verdicts", default="eigen,semi,fully")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("boundary", help="minimal certified level vs load scale")
    _common(p)
    p.add_argument("--s-min", type=float, default=0.8)
    p.add_argument("--s-max", type=float, default=1.2)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=40)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("simulate", help="nonlinear time-domain simulation")
    _common(p)
    p.add_argument("--t-end", type=float, default=10.0)
    p.add_argument("--dt-max", type=float, default=0.05)
    p.add_argument("--sample-dt", type=float, default=0.01)
    p.add_argument("--perturb", action="append", default=[], metavar="BUS:CHANNEL:MAG")
    p.add_argument("--fault", action="append", default=[], metavar="BUS:R:T_ON[:T_OFF]")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CaseParseError, UsageError) as exc:
        print(f"error: stage parse: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CaseValidationError as exc:
        print(f"error: stage validate: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AssessmentError as exc:
        print(f"error: stage odpm: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OracleError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: stage parse: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
