"""Canonical JSON and CSV forms for instances, reports, and audits.

All JSON output is canonical: keys sorted, two-space indent, floats in
Python's shortest round-trip form, NaN/Inf rejected in both directions, and
a single trailing newline — so identical inputs produce byte-identical
files.  Parsing is strict: unknown keys, wrong shapes, and non-finite
numbers are reported as validation violations, never silently patched.  The
one deliberate convenience is a scalar demand on a multi-period instance,
which is split uniformly across periods and flagged on the instance.
"""

from __future__ import annotations

import json
from types import SimpleNamespace

import numpy as np

from .core import (
    Buyer,
    Item,
    MarketInstance,
    UtilityProfile,
    ValuationMatrix,
    Violation,
    arrays,
    validate_instance,
)
from .errors import InstanceMismatch, ValidationFailed
from .leximin import LeximinMode, LeximinResult
from .programs import PenaltyKind, ProgramKind, SolveReport

INSTANCE_KEYS = {"periods", "budget_mode", "buyers", "items", "valuations"}
REPORT_KEYS = {
    "program",
    "gamma",
    "penalty",
    "allocation",
    "prices",
    "utilities",
    "objective",
    "kkt_residuals",
    "total_variation",
    "penalty_value",
    "budget_mode",
    "converged",
}
LEXIMIN_KEYS = REPORT_KEYS | {"stages"}

#: canonical program spelling written for a bare leximin result
PROGRAM_FOR_MODE = {
    LeximinMode.SINGLE: ProgramKind.EG_DEMAND,
    LeximinMode.TIME_SUM: ProgramKind.EG_TIME_SUM,
    LeximinMode.TIME_INDEXED: ProgramKind.EG_TIME_GEO_MEAN,
}


def canonical_dumps(obj) -> str:
    """Canonical JSON text: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _reject_constant(name: str):
    raise ValidationFailed(
        [Violation("nonfinite-number", "json", f"non-finite JSON constant {name!r}")]
    )


def loads_strict(text: str):
    """json.loads that rejects NaN/Infinity and reports malformed text."""
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ValidationFailed(
            [Violation("bad-json", "json", f"malformed JSON: {exc}")]
        ) from exc


# ---------------------------------------------------------------------------
# instances


def instance_to_payload(inst: MarketInstance) -> dict:
    """JSON-ready instance; demand is a scalar exactly when periods == 1."""
    T = inst.periods
    buyers = []
    for b in inst.buyers:
        demand = float(b.demand[0]) if T == 1 else [float(d) for d in b.demand]
        buyers.append({"id": b.id, "budget": float(b.budget), "demand": demand})
    items = [
        {
            "id": it.id,
            "supply_total": float(it.supply_total),
            "supply_per_period": [float(s) for s in it.supply_per_period],
        }
        for it in inst.items
    ]
    valuations = [
        {"buyer": b, "item": i, "value": float(v)} for b, i, v in inst.valuations.edges
    ]
    return {
        "periods": T,
        "budget_mode": inst.budget_mode,
        "buyers": buyers,
        "items": items,
        "valuations": valuations,
    }


def _want(obj: dict, key: str, entity: str, violations: list[Violation], default=None):
    if key not in obj:
        if default is not None:
            return default
        violations.append(Violation("missing-key", entity, f"missing key {key!r}"))
        return None
    return obj[key]


def _as_number_list(value, length: int, entity: str, violations: list[Violation]):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return None  # caller decides whether scalars are allowed
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        violations.append(Violation("bad-type", entity, "expected a number or number list"))
        return None
    if len(value) != length:
        violations.append(
            Violation("bad-length", entity, f"expected length {length}, got {len(value)}")
        )
        return None
    return [float(v) for v in value]


def instance_from_payload(obj) -> MarketInstance:
    """Build and validate an instance from parsed JSON.

    A scalar demand on a multi-period instance is split uniformly across
    periods (flagged via demand_was_split); everything else must match the
    schema exactly.

    Raises:
        ValidationFailed: schema violations or an instance that fails
            structural validation.
    """
    violations: list[Violation] = []
    if not isinstance(obj, dict):
        raise ValidationFailed(
            [Violation("bad-type", "instance", "top level must be an object")]
        )
    unknown = set(obj) - INSTANCE_KEYS
    for key in sorted(unknown):
        violations.append(Violation("unknown-key", key, f"unknown instance key {key!r}"))
    periods = obj.get("periods", 1)
    if not isinstance(periods, int) or isinstance(periods, bool) or periods < 1:
        raise ValidationFailed(
            violations
            + [Violation("bad-periods", "periods", f"periods must be an int >= 1, got {periods!r}")]
        )
    budget_mode = obj.get("budget_mode", "explicit")
    demand_was_split = False

    buyers = []
    for k, rec in enumerate(obj.get("buyers", []) or []):
        if not isinstance(rec, dict):
            violations.append(Violation("bad-type", f"buyers[{k}]", "buyer must be an object"))
            continue
        bid = _want(rec, "id", f"buyers[{k}]", violations)
        if not isinstance(bid, str):
            violations.append(Violation("bad-type", f"buyers[{k}].id", "id must be a string"))
            continue
        budget = rec.get("budget", 1.0)
        if not isinstance(budget, (int, float)) or isinstance(budget, bool):
            violations.append(Violation("bad-type", f"{bid}.budget", "budget must be a number"))
            budget = 1.0
        raw_demand = rec.get("demand", 0.0)
        demand = _as_number_list(raw_demand, periods, f"{bid}.demand", violations)
        if demand is None:
            if isinstance(raw_demand, (int, float)) and not isinstance(raw_demand, bool):
                if periods == 1:
                    demand = [float(raw_demand)]
                else:
                    demand = [float(raw_demand) / periods] * periods
                    demand_was_split = True
            else:
                continue
        buyers.append(Buyer(id=bid, budget=float(budget), demand=tuple(demand)))
    if "buyers" not in obj:
        violations.append(Violation("missing-key", "buyers", "missing key 'buyers'"))

    items = []
    for k, rec in enumerate(obj.get("items", []) or []):
        if not isinstance(rec, dict):
            violations.append(Violation("bad-type", f"items[{k}]", "item must be an object"))
            continue
        iid = _want(rec, "id", f"items[{k}]", violations)
        if not isinstance(iid, str):
            violations.append(Violation("bad-type", f"items[{k}].id", "id must be a string"))
            continue
        raw_pp = rec.get("supply_per_period")
        if raw_pp is None:
            violations.append(
                Violation("missing-key", f"{iid}.supply_per_period", "missing supply_per_period")
            )
            continue
        pp = _as_number_list(raw_pp, periods, f"{iid}.supply_per_period", violations)
        if pp is None:
            if (
                isinstance(raw_pp, (int, float))
                and not isinstance(raw_pp, bool)
                and periods == 1
            ):
                pp = [float(raw_pp)]
            else:
                continue
        total = rec.get("supply_total")
        if total is None and periods == 1:
            total = pp[0]
        if not isinstance(total, (int, float)) or isinstance(total, bool):
            violations.append(
                Violation("bad-type", f"{iid}.supply_total", "supply_total must be a number")
            )
            continue
        items.append(
            Item(id=iid, supply_per_period=tuple(pp), supply_total=float(total))
        )
    if "items" not in obj:
        violations.append(Violation("missing-key", "items", "missing key 'items'"))

    edges: dict[tuple[str, str], float] = {}
    for k, rec in enumerate(obj.get("valuations", []) or []):
        if not isinstance(rec, dict):
            violations.append(
                Violation("bad-type", f"valuations[{k}]", "valuation must be an object")
            )
            continue
        b = rec.get("buyer")
        i = rec.get("item")
        v = rec.get("value")
        if not isinstance(b, str) or not isinstance(i, str):
            violations.append(
                Violation("bad-type", f"valuations[{k}]", "buyer and item must be strings")
            )
            continue
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            violations.append(Violation("bad-type", f"{b}/{i}", "value must be a number"))
            continue
        if (b, i) in edges:
            violations.append(Violation("duplicate-valuation", f"{b}/{i}", "pair appears twice"))
        edges[(b, i)] = float(v)
    if "valuations" not in obj:
        violations.append(Violation("missing-key", "valuations", "missing key 'valuations'"))

    if violations:
        raise ValidationFailed(violations)
    inst = MarketInstance(
        buyers=tuple(buyers),
        items=tuple(items),
        valuations=ValuationMatrix.from_dict(edges),
        periods=periods,
        budget_mode=budget_mode,
        demand_was_split=demand_was_split,
    )
    structural = validate_instance(inst)
    if structural:
        raise ValidationFailed(structural)
    return inst


def parse_instance(text: str) -> MarketInstance:
    return instance_from_payload(loads_strict(text))


def dump_instance(inst: MarketInstance) -> str:
    return canonical_dumps(instance_to_payload(inst))


def load_instance(path: str) -> MarketInstance:
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())


def save_instance(inst: MarketInstance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_instance(inst))


# ---------------------------------------------------------------------------
# reports


def _allocation_payload(inst: MarketInstance, x: np.ndarray) -> list:
    """Dense allocation array indexed [buyer][item][period] in instance order."""
    a = arrays(inst)
    x = np.asarray(x)
    return [
        [[float(x[i, j, t]) for t in range(a.T)] for j in range(a.m)] for i in range(a.n)
    ]


def _allocation_from_payload(inst: MarketInstance, obj) -> np.ndarray:
    a = arrays(inst)
    if not isinstance(obj, list) or len(obj) != a.n:
        raise ValidationFailed(
            [
                Violation(
                    "bad-length",
                    "allocation",
                    f"allocation must be a list of {a.n} buyer rows",
                )
            ]
        )
    x = np.zeros((a.n, a.m, a.T))
    for i, row in enumerate(obj):
        if not isinstance(row, list) or len(row) != a.m:
            raise ValidationFailed(
                [
                    Violation(
                        "bad-length",
                        f"allocation[{i}]",
                        f"expected {a.m} item rows",
                    )
                ]
            )
        for j, amounts in enumerate(row):
            got = _as_number_list(amounts, a.T, f"allocation[{i}][{j}]", violations := [])
            if got is None:
                raise ValidationFailed(
                    violations
                    or [
                        Violation(
                            "bad-type",
                            f"allocation[{i}][{j}]",
                            f"expected {a.T} per-period amounts",
                        )
                    ]
                )
            x[i, j, :] = got
    return x


def _utilities_payload(inst: MarketInstance, utilities: UtilityProfile) -> dict:
    a = arrays(inst)
    return {
        "per_period": [
            [float(v) for v in utilities.per_period[i]] for i in range(a.n)
        ],
        "aggregate": [float(utilities.aggregate[i]) for i in range(a.n)],
    }


def _prices_payload(inst: MarketInstance, report: SolveReport) -> dict:
    a = arrays(inst)
    return {
        "p": [[float(v) for v in report.prices[j]] for j in range(a.m)],
        "lambda_period": [
            [float(v) for v in report.lambda_period[j]] for j in range(a.m)
        ],
        "lambda_total": [float(report.lambda_total[j]) for j in range(a.m)],
    }


def solve_report_payload(report: SolveReport) -> dict:
    """JSON-ready payload for one program solve (closed key set)."""
    inst = report.instance
    return {
        "program": str(report.program),
        "gamma": float(report.gamma),
        "penalty": str(report.penalty) if report.penalty is not None else None,
        "allocation": _allocation_payload(inst, report.x),
        "prices": _prices_payload(inst, report),
        "utilities": _utilities_payload(inst, report.utilities),
        "objective": float(report.objective_value),
        "kkt_residuals": {k: float(v) for k, v in sorted(report.kkt.items())},
        "total_variation": float(report.total_variation),
        "penalty_value": float(report.penalty_value),
        "budget_mode": report.budget_mode,
        "converged": bool(report.converged),
    }


def leximin_report_payload(result: LeximinResult, program: str | None = None) -> dict:
    """JSON-ready payload for a leximin solve: null prices, stage ladder."""
    inst = result.instance
    if program is None:
        program = str(PROGRAM_FOR_MODE[result.mode])
    stages = [
        {
            "optimum": float(s.optimum),
            "frozen": [list(k) if isinstance(k, tuple) else k for k in s.frozen],
        }
        for s in result.stages
    ]
    objective = float(result.stages[0].optimum) if result.stages else 0.0
    spec_tv = float(np.abs(np.diff(result.x, axis=2)).sum()) if inst.periods > 1 else 0.0
    return {
        "program": str(program),
        "gamma": 0.0,
        "penalty": None,
        "allocation": _allocation_payload(inst, result.x),
        "prices": None,
        "utilities": _utilities_payload(inst, result.utilities),
        "objective": objective,
        "kkt_residuals": None,
        "total_variation": spec_tv,
        "penalty_value": 0.0,
        "budget_mode": result.budget_mode,
        "converged": bool(result.converged),
        "stages": stages,
    }


def report_from_payload(obj, inst: MarketInstance):
    """Reconstruct a solved report (program or leximin) against an instance.

    Returns a SolveReport for price-carrying payloads, or a lightweight
    namespace (instance, x, utilities, prices=None, stages) for leximin
    payloads; both shapes are accepted by the audit runner.
    """
    if not isinstance(obj, dict):
        raise ValidationFailed([Violation("bad-type", "report", "report must be an object")])
    missing = REPORT_KEYS - set(obj)
    if missing:
        raise ValidationFailed(
            [
                Violation("missing-key", k, f"report is missing key {k!r}")
                for k in sorted(missing)
            ]
        )
    x = _allocation_from_payload(inst, obj["allocation"])
    utilities = UtilityProfile.compute(
        inst,
        x,
        rule="geo_mean"
        if obj["program"] in (str(ProgramKind.EG_TIME_GEO_MEAN), str(ProgramKind.EG_SMOOTH))
        and "stages" not in obj
        else "sum",
    )
    if obj.get("prices") is None:
        return SimpleNamespace(
            instance=inst,
            x=x,
            utilities=utilities,
            prices=None,
            stages=obj.get("stages"),
            program=obj["program"],
            converged=bool(obj["converged"]),
        )
    a = arrays(inst)
    prices_obj = obj["prices"]
    p = np.zeros((a.m, a.T))
    lam_per = np.zeros((a.m, a.T))
    lam_tot = np.zeros(a.m)
    try:
        for j in range(a.m):
            p[j] = prices_obj["p"][j]
            lam_per[j] = prices_obj["lambda_period"][j]
            lam_tot[j] = prices_obj["lambda_total"][j]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise InstanceMismatch(f"price table does not match the instance: {exc}") from exc
    penalty = obj["penalty"]
    return SolveReport(
        program=ProgramKind(obj["program"]),
        instance=inst,
        x=x,
        prices=p,
        lambda_period=lam_per,
        lambda_total=lam_tot,
        utilities=utilities,
        objective_value=float(obj["objective"]),
        kkt={k: float(v) for k, v in (obj["kkt_residuals"] or {}).items()},
        gamma=float(obj["gamma"]),
        penalty=PenaltyKind(penalty) if penalty is not None else None,
        total_variation=float(obj["total_variation"]),
        penalty_value=float(obj["penalty_value"]),
        converged=bool(obj["converged"]),
        solver_name="(parsed)",
        iterations=0,
    )


# ---------------------------------------------------------------------------
# audits and CSV tables


def audit_payload(audit_report) -> list:
    """JSON array of audit records in their fixed run order."""
    return [
        {
            "check": r.check,
            "applicable": bool(r.applicable),
            "passed": bool(r.passed),
            "max_residual": float(r.max_residual),
            "witnesses": r.witnesses,
        }
        for r in audit_report.records
    ]


def sweep_csv(rows) -> str:
    """gamma,objective,total_variation,penalty_value — one line per point."""
    lines = ["gamma,objective,total_variation,penalty_value"]
    for row in rows:
        g, obj, tv, pen = row.csv_values()
        lines.append(f"{_csv_float(g)},{_csv_float(obj)},{_csv_float(tv)},{_csv_float(pen)}")
    return "\n".join(lines) + "\n"


def robustness_csv(summary) -> str:
    """realization,buyer,shortfall,coverage — one line per pair."""
    lines = ["realization,buyer,shortfall,coverage"]
    for r, buyer, shortfall, coverage in summary.rows():
        lines.append(f"{r},{buyer},{_csv_float(shortfall)},{_csv_float(coverage)}")
    return "\n".join(lines) + "\n"


def _csv_float(v: float) -> str:
    if isinstance(v, float) and v != v:  # NaN marks a failed sweep point
        return "nan"
    return repr(float(v))
