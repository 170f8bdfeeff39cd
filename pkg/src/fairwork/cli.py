"""Command-line interface: solve, leximin, verify, compare, sweep, gen, evaluate.

Exit codes: 0 on success, 1 on a domain error (a canonical JSON error object
is written to stderr), 2 on usage errors.  All file output is canonical JSON
or the fixed CSV tables, so identical invocations produce byte-identical
files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import audit as audit_mod
from . import engine, scenarios, serialize
from .core import resolve_budgets
from .errors import FairworkError
from .leximin import MODE_FOR_PROGRAM, leximin_solve
from .programs import PenaltyKind, ProgramKind, solve_program

PROGRAM_CHOICES = [str(k) for k in ProgramKind]
PENALTY_CHOICES = [str(k) for k in PenaltyKind]
BUDGET_CHOICES = ["explicit", "unit", "demand"]  # demand -> equal-to-demand

_BUDGET_FLAG_TO_MODE = {
    "explicit": "explicit",
    "unit": "unit",
    "demand": "equal-to-demand",
}


def _add_common(p: argparse.ArgumentParser, *, output: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0, help="deterministic seed (default 0)")
    p.add_argument("--verbose", action="store_true", help="print solver traces to stderr")
    if output:
        p.add_argument("--out", metavar="FILE", help="write output here instead of stdout")


def _add_instance_input(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--in", dest="infile", required=True, metavar="FILE", help="market instance JSON"
    )
    p.add_argument(
        "--budgets",
        choices=BUDGET_CHOICES,
        default=None,
        help="override the instance budget mode (demand = budgets equal to total demand)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairwork",
        description=(
            "Fair work allocation: budget-weighted log-surplus market programs "
            "with hard demands, hierarchical supplies, leximin, audits, and a "
            "scenario lab."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one log-surplus program and report it")
    _add_instance_input(p)
    p.add_argument("--program", choices=PROGRAM_CHOICES, required=True)
    p.add_argument("--gamma", type=float, default=0.0, help="smoothness penalty weight")
    p.add_argument("--penalty", choices=PENALTY_CHOICES, default=None)
    p.add_argument(
        "--variation-band",
        type=float,
        default=None,
        metavar="R",
        help="hard band r in (0,1]: x_{t+1} within [r*x_t, (2-r)*x_t]",
    )
    p.add_argument("--tol", type=float, default=engine.KKT_TOL, help="KKT residual bound")
    _add_common(p)

    p = sub.add_parser("leximin", help="staged leximin allocation for a program's components")
    _add_instance_input(p)
    p.add_argument(
        "--program",
        choices=PROGRAM_CHOICES,
        required=True,
        help="component structure follows the program (eg-smooth has none)",
    )
    _add_common(p)

    p = sub.add_parser("verify", help="re-audit a report against its instance")
    _add_instance_input(p)
    p.add_argument("--report", required=True, metavar="FILE", help="report JSON to audit")
    p.add_argument("--tol", type=float, default=audit_mod.AUDIT_RTOL)
    _add_common(p)

    p = sub.add_parser("compare", help="distances between two reports on one market")
    _add_instance_input(p)
    p.add_argument("--a", dest="report_a", required=True, metavar="FILE")
    p.add_argument("--b", dest="report_b", required=True, metavar="FILE")
    _add_common(p)

    p = sub.add_parser("sweep", help="re-solve the smooth program along a gamma path")
    _add_instance_input(p)
    p.add_argument(
        "--gamma",
        type=float,
        action="append",
        dest="gammas",
        required=True,
        metavar="G",
        help="penalty weight; repeat the flag for each sweep point",
    )
    p.add_argument("--penalty", choices=PENALTY_CHOICES, required=True)
    p.add_argument("--variation-band", type=float, default=None, metavar="R")
    p.add_argument("--tol", type=float, default=engine.KKT_TOL)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_common(p)

    p = sub.add_parser("gen", help="generate a market instance")
    p.add_argument("--buyers", type=int, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--periods", type=int, default=1)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--trend", choices=list(scenarios.TRENDS), default="flat")
    p.add_argument("--demand-level", type=float, default=0.3)
    p.add_argument("--supply-factor", type=float, default=1.5)
    p.add_argument(
        "--values",
        choices=list(scenarios.VALUATION_MODES),
        default="general",
        help="valuation structure: binary (all 1), bivalued (low/high), general (uniform)",
    )
    p.add_argument("--value-low", type=float, default=0.5)
    p.add_argument("--value-high", type=float, default=2.0)
    p.add_argument(
        "--budgets",
        choices=BUDGET_CHOICES,
        default="explicit",
        help="budget mode stamped on the generated instance",
    )
    p.add_argument(
        "--exclusive-pair",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="force the exclusive buyer-item pair on or off (default: on when buyers >= 10)",
    )
    p.add_argument(
        "--zero-demand",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="force the zero-demand sentinel buyer on or off (default: on when buyers >= 10)",
    )
    _add_common(p)

    p = sub.add_parser("evaluate", help="robustness of a report's allocation to demand shocks")
    _add_instance_input(p)
    p.add_argument("--report", required=True, metavar="FILE")
    p.add_argument("--realizations", type=int, default=100, metavar="K")
    p.add_argument("--sigma", type=float, default=0.2, help="lognormal demand noise scale")
    p.add_argument("--spike-prob", type=float, default=0.05)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_common(p)

    return parser


def _load_instance(args):
    inst = serialize.load_instance(args.infile)
    if getattr(args, "budgets", None):
        inst = replace(inst, budget_mode=_BUDGET_FLAG_TO_MODE[args.budgets])
    return inst


def _emit(args, text: str) -> None:
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _trace(args, lines) -> None:
    if getattr(args, "verbose", False):
        for line in lines:
            print(line, file=sys.stderr)


def _cmd_solve(args) -> int:
    inst = _load_instance(args)
    report = solve_program(
        inst,
        args.program,
        gamma=args.gamma,
        penalty=args.penalty,
        tol=args.tol,
        seed=args.seed,
        variation_band=args.variation_band,
    )
    if inst.demand_was_split:
        report.trace.append("scalar demand was split uniformly across periods")
    _trace(args, report.trace)
    _emit(args, serialize.canonical_dumps(serialize.solve_report_payload(report)))
    return 0


def _cmd_leximin(args, parser: argparse.ArgumentParser) -> int:
    kind = ProgramKind(args.program)
    mode = MODE_FOR_PROGRAM.get(kind)
    if mode is None:
        parser.error(f"program {kind} has no leximin component structure")
    inst = _load_instance(args)
    result = leximin_solve(inst, mode, seed=args.seed)
    if inst.demand_was_split:
        result.trace.append("scalar demand was split uniformly across periods")
    _trace(args, result.trace)
    _emit(
        args,
        serialize.canonical_dumps(
            serialize.leximin_report_payload(result, program=str(kind))
        ),
    )
    return 0


def _cmd_verify(args) -> int:
    inst = resolve_budgets(_load_instance(args))
    with open(args.report, encoding="utf-8") as fh:
        payload = serialize.loads_strict(fh.read())
    parsed = serialize.report_from_payload(payload, inst)
    audit_report = audit_mod.run_all_audits(parsed, tol=args.tol)
    _emit(args, serialize.canonical_dumps(serialize.audit_payload(audit_report)))
    return 0 if audit_report.passed else 1


def _cmd_compare(args) -> int:
    inst = resolve_budgets(_load_instance(args))
    parsed = []
    for path in (args.report_a, args.report_b):
        with open(path, encoding="utf-8") as fh:
            parsed.append(serialize.report_from_payload(serialize.loads_strict(fh.read()), inst))
    result = audit_mod.compare_solutions(parsed[0], parsed[1])
    _emit(args, serialize.canonical_dumps(result))
    return 0


def _cmd_sweep(args, parser: argparse.ArgumentParser) -> int:
    inst = _load_instance(args)
    rows = scenarios.sweep_gamma(
        inst,
        args.penalty,
        args.gammas,
        tol=args.tol,
        seed=args.seed,
        variation_band=args.variation_band,
    )
    for row in rows:
        if row.failed:
            print(f"gamma {row.gamma:g} failed: {row.error}", file=sys.stderr)
    if args.format == "csv":
        _emit(args, serialize.sweep_csv(rows))
    else:
        payload = [
            {
                "gamma": row.gamma,
                "objective": None if row.failed else row.objective,
                "total_variation": None if row.failed else row.total_variation,
                "penalty_value": None if row.failed else row.penalty_value,
                "converged": row.converged,
                "failed": row.failed,
                "error": row.error,
            }
            for row in rows
        ]
        _emit(args, serialize.canonical_dumps(payload))
    return 0


def _cmd_gen(args) -> int:
    config = scenarios.GeneratorConfig(
        n_buyers=args.buyers,
        n_items=args.items,
        periods=args.periods,
        density=args.density,
        trend=args.trend,
        demand_level=args.demand_level,
        supply_factor=args.supply_factor,
        valuation_mode=args.values,
        value_range=(args.value_low, args.value_high),
        budget_mode=_BUDGET_FLAG_TO_MODE[args.budgets],
        include_exclusive_pair=args.exclusive_pair,
        include_zero_demand=args.zero_demand,
        seed=args.seed,
    )
    inst = scenarios.generate(config)
    _emit(args, serialize.dump_instance(inst))
    return 0


def _cmd_evaluate(args) -> int:
    inst = resolve_budgets(_load_instance(args))
    with open(args.report, encoding="utf-8") as fh:
        parsed = serialize.report_from_payload(serialize.loads_strict(fh.read()), inst)
    batch = scenarios.draw_realizations(
        inst,
        args.realizations,
        sigma=args.sigma,
        spike_prob=args.spike_prob,
        seed=args.seed,
    )
    summary = scenarios.evaluate_robustness(inst, parsed.x, batch)
    if args.format == "csv":
        _emit(args, serialize.robustness_csv(summary))
    else:
        payload = {
            "buyers": summary.buyers,
            "coverage_probability": summary.coverage_probability,
            "mean_shortfall": [float(v) for v in summary.mean_shortfall],
            "p95_shortfall": [float(v) for v in summary.p95_shortfall],
            "mean_coverage": [float(v) for v in summary.mean_coverage],
            "worst_coverage": [float(v) for v in summary.worst_coverage],
            "idle_supply": summary.idle_supply,
            "realizations": batch.k,
            "sigma": batch.sigma,
            "spike_prob": batch.spike_prob,
            "seed": batch.seed,
        }
        _emit(args, serialize.canonical_dumps(payload))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "leximin":
            return _cmd_leximin(args, parser)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "sweep":
            return _cmd_sweep(args, parser)
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        parser.error(f"unknown command {args.command!r}")
    except FairworkError as exc:
        sys.stderr.write(serialize.canonical_dumps(exc.to_payload()))
        return 1
    except OSError as exc:
        sys.stderr.write(
            serialize.canonical_dumps(
                {"error": "io-error", "message": str(exc), "field": None}
            )
        )
        return 1
    return 2


#: entry point under its operational name; identical to main
run = main


if __name__ == "__main__":
    sys.exit(main())
