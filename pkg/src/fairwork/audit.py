"""Machine-checkable audits of solved allocations and their price systems.

Every audit recomputes what it checks from the raw allocation, the instance
data, and the reported multiplier layers — never from the solver's own
residual bookkeeping — so a passing audit is an independent certificate:

* feasibility          — supply layers, nonnegativity, no mass off the support.
* bang-per-buck        — value-per-price never exceeds the buyer's marginal
                         bound, with equality on the purchase support; a zero
                         price on a valued item is an immediate failure.
* budget-identity      — spending equals the demand-inflated budget the
                         program's first-order conditions imply.
* price-complementarity— each supply layer's multiplier vanishes off its
                         binding rows.
* ceei                 — budget-scaled envy-freeness and proportional fair
                         share (zero demands, one period).
* claim-totals         — unit-valuation accounting identity: utilities sum to
                         usable supply minus total demand.

Audits take the instance plus either a program SolveReport or a leximin
result; checks whose preconditions fail are reported as not applicable
rather than silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    FEASIBILITY_TOL,
    MarketInstance,
    allocation_violations,
    arrays,
    resolve_budgets,
    surplus_per_period,
)
from .engine import SUPPORT_TOL
from .errors import InstanceMismatch, MissingPrices
from .programs import ProgramKind, SolveReport

AUDIT_RTOL = 1e-5  # default residual bound for every audit
EQUIVALENCE_TOL = 1e-4  # sorted-profile gap at which two solutions count as equal
MAX_WITNESSES = 5  # most-severe witnesses kept per failing check


@dataclass
class CheckRecord:
    """Outcome of one audit: applicability, verdict, residual, and witnesses."""

    check: str
    applicable: bool
    passed: bool
    max_residual: float
    witnesses: list[dict] = field(default_factory=list)


@dataclass
class AuditReport:
    """All audit records for one solution, in a fixed order."""

    records: list[CheckRecord]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records if r.applicable)

    def record(self, name: str) -> CheckRecord:
        for r in self.records:
            if r.check == name:
                return r
        raise KeyError(name)


def _top_witnesses(entries: list[tuple[float, dict]]) -> list[dict]:
    entries.sort(key=lambda e: -e[0])
    return [w for _, w in entries[:MAX_WITNESSES]]


def _checked_arrays(inst: MarketInstance, report):
    """Resolved arrays for inst, verified to describe the report's market."""
    resolved = resolve_budgets(inst)
    a = arrays(resolved)
    rinst = getattr(report, "instance", None)
    if rinst is not None:
        ra = arrays(rinst)
        if (
            a.buyer_ids != ra.buyer_ids
            or a.item_ids != ra.item_ids
            or a.T != ra.T
            or resolved.valuations != rinst.valuations
        ):
            raise InstanceMismatch("report was produced for a different market")
    return a


def _marginal_bounds(kind: ProgramKind, a, pp: np.ndarray) -> np.ndarray:
    """Upper bound on value-per-price for each (buyer, period).

    Aggregate-surplus programs bound v_ij / p_jt by u_i / B_i; the per-period
    geometric-mean program by T * u_it / B_i; the smoothness program at
    gamma 0 by u_it / B_i.
    """
    if kind is ProgramKind.EG_TIME_GEO_MEAN:
        return a.T * pp / a.budgets[:, None]
    if kind is ProgramKind.EG_SMOOTH:
        return pp / a.budgets[:, None]
    agg = pp.sum(axis=1, keepdims=True)
    return np.repeat(agg, a.T, axis=1) / a.budgets[:, None]


def audit_feasibility(
    inst: MarketInstance, x: np.ndarray, tol: float = FEASIBILITY_TOL
) -> CheckRecord:
    """Supply caps, nonnegativity, and support containment of an allocation."""
    violations = allocation_violations(inst, x, tol=tol)
    witnesses = [
        {"code": v.code, "entity": v.entity, "message": v.message} for v in violations
    ][:MAX_WITNESSES]
    a = arrays(inst)
    load = np.asarray(x).sum(axis=0)
    resid = max(
        float(np.maximum(-np.asarray(x), 0.0).max()),
        float(np.maximum(load - a.supply_period, 0.0).max()),
        float(np.maximum(load.sum(axis=1) - a.supply_total, 0.0).max()),
    )
    return CheckRecord(
        check="feasibility",
        applicable=True,
        passed=not violations,
        max_residual=resid,
        witnesses=witnesses,
    )


def audit_bang_per_buck(
    inst: MarketInstance, report: SolveReport, tol: float = AUDIT_RTOL
) -> CheckRecord:
    """Value-per-price vs. the marginal bound: never above, tight on support.

    For every valued (buyer, item, period) with price above tol, checks
    v_ij / p_jt <= bound_it + tol, with equality within tol wherever the
    buyer actually purchases (x_ijt > support tol).  A price at or below
    tol on an item some buyer values is an immediate failure witness —
    such an item would offer unbounded bang per buck.

    Raises MissingPrices when the report carries no price system.  Not
    applicable when a smoothness penalty is active (gamma > 0), where the
    penalty term enters the stationarity condition.
    """
    if report.prices is None:
        raise MissingPrices("bang-per-buck audit needs a price system")
    if report.gamma > 0.0:
        return CheckRecord("bang-per-buck", False, True, 0.0, [])
    a = _checked_arrays(inst, report)
    pp = surplus_per_period(inst, report.x)
    bounds = _marginal_bounds(report.program, a, pp)
    p = report.prices  # (m, T)

    entries: list[tuple[float, dict]] = []
    worst = 0.0
    for e in range(a.n_edges):
        i, j = int(a.edge_buyer[e]), int(a.edge_item[e])
        for t in range(a.T):
            if bounds[i, t] <= 0:
                worst = max(worst, 1.0)
                entries.append(
                    (1.0, {"buyer": a.buyer_ids[i], "period": t, "reason": "nonpositive surplus"})
                )
                continue
            if p[j, t] <= tol:
                worst = max(worst, 1.0)
                entries.append(
                    (
                        1.0,
                        {
                            "buyer": a.buyer_ids[i],
                            "item": a.item_ids[j],
                            "period": t,
                            "price": float(p[j, t]),
                            "kind": "zero price on a valued item",
                        },
                    )
                )
                continue
            ratio = a.values[i, j] / p[j, t]
            scale = max(1.0, bounds[i, t])
            over = (ratio - bounds[i, t]) / scale  # >0: bundle beats the bound
            gap = abs(ratio - bounds[i, t]) / scale
            if over > worst:
                worst = over
            if over > tol:
                entries.append(
                    (
                        over,
                        {
                            "buyer": a.buyer_ids[i],
                            "item": a.item_ids[j],
                            "period": t,
                            "price": float(p[j, t]),
                            "value_per_price": float(ratio),
                            "marginal_bound": float(bounds[i, t]),
                            "kind": "value per price above the marginal bound",
                        },
                    )
                )
            if report.x[i, j, t] > SUPPORT_TOL:
                if gap > worst:
                    worst = gap
                if gap > tol:
                    entries.append(
                        (
                            gap,
                            {
                                "buyer": a.buyer_ids[i],
                                "item": a.item_ids[j],
                                "period": t,
                                "price": float(p[j, t]),
                                "value_per_price": float(ratio),
                                "marginal_bound": float(bounds[i, t]),
                                "kind": "support purchase off the maximal ratio",
                            },
                        )
                    )
    return CheckRecord(
        check="bang-per-buck",
        applicable=True,
        passed=bool(worst <= tol),
        max_residual=float(worst),
        witnesses=_top_witnesses(entries),
    )


def audit_budget_identity(
    inst: MarketInstance, report: SolveReport, tol: float = AUDIT_RTOL
) -> CheckRecord:
    """Spending equals the demand-inflated budget of the program's optimum.

    eg: B; eg-demand / eg-time-sum: B * (1 + d / u); eg-time-geo:
    B * mean_t(1 + d_t / u_t); eg-smooth at gamma 0: B * sum_t(1 + d_t / u_t).
    Raises MissingPrices without a price system; not applicable for gamma > 0.
    """
    if report.prices is None:
        raise MissingPrices("budget identity audit needs a price system")
    if report.gamma > 0.0:
        return CheckRecord("budget-identity", False, True, 0.0, [])
    a = _checked_arrays(inst, report)
    pp = surplus_per_period(inst, report.x)
    spend = np.einsum("jt,ijt->i", report.prices, report.x)
    kind = report.program
    if (pp <= 0).any() and kind in (ProgramKind.EG_TIME_GEO_MEAN, ProgramKind.EG_SMOOTH):
        return CheckRecord(
            "budget-identity",
            True,
            False,
            1.0,
            [{"reason": "nonpositive per-period surplus"}],
        )
    if kind is ProgramKind.EG:
        expected = a.budgets.copy()
    elif kind in (ProgramKind.EG_DEMAND, ProgramKind.EG_TIME_SUM):
        u = pp.sum(axis=1)
        if (u <= 0).any():
            return CheckRecord(
                "budget-identity", True, False, 1.0, [{"reason": "nonpositive surplus"}]
            )
        expected = a.budgets * (1.0 + a.demand.sum(axis=1) / u)
    elif kind is ProgramKind.EG_TIME_GEO_MEAN:
        expected = a.budgets * (1.0 + a.demand / pp).mean(axis=1)
    else:  # EG_SMOOTH at gamma 0
        expected = a.budgets * (1.0 + a.demand / pp).sum(axis=1)
    resid = np.abs(spend - expected) / np.maximum(1.0, np.abs(expected))
    worst = float(resid.max())
    entries = [
        (
            float(resid[i]),
            {
                "buyer": a.buyer_ids[i],
                "spend": float(spend[i]),
                "expected": float(expected[i]),
            },
        )
        for i in range(a.n)
        if resid[i] > tol
    ]
    return CheckRecord(
        check="budget-identity",
        applicable=True,
        passed=bool(worst <= tol),
        max_residual=worst,
        witnesses=_top_witnesses(entries),
    )


def audit_price_complementarity(
    inst: MarketInstance, report: SolveReport, tol: float = AUDIT_RTOL
) -> CheckRecord:
    """Supply multipliers are nonnegative and vanish wherever a row has slack."""
    if report.prices is None:
        raise MissingPrices("complementarity audit needs a price system")
    a = _checked_arrays(inst, report)
    load = report.x.sum(axis=0)  # (m, T)
    slack_per = a.supply_period - load
    slack_tot = a.supply_total - load.sum(axis=1)
    per_prod = np.abs(report.lambda_period * slack_per) / np.maximum(1.0, a.supply_period)
    tot_prod = np.abs(report.lambda_total * slack_tot) / np.maximum(1.0, a.supply_total)
    neg_per = np.maximum(-report.lambda_period, 0.0)
    neg_tot = np.maximum(-report.lambda_total, 0.0)
    worst = max(
        float(per_prod.max()),
        float(tot_prod.max()) if a.T > 1 else 0.0,
        float(neg_per.max()),
        float(neg_tot.max()),
    )
    entries: list[tuple[float, dict]] = []
    for j in range(a.m):
        for t in range(a.T):
            if neg_per[j, t] > tol:
                entries.append(
                    (
                        float(neg_per[j, t]),
                        {
                            "item": a.item_ids[j],
                            "period": t,
                            "layer": "period",
                            "multiplier": float(report.lambda_period[j, t]),
                            "kind": "negative multiplier",
                        },
                    )
                )
        if neg_tot[j] > tol:
            entries.append(
                (
                    float(neg_tot[j]),
                    {
                        "item": a.item_ids[j],
                        "layer": "total",
                        "multiplier": float(report.lambda_total[j]),
                        "kind": "negative multiplier",
                    },
                )
            )
    for j in range(a.m):
        for t in range(a.T):
            if per_prod[j, t] > tol:
                entries.append(
                    (
                        float(per_prod[j, t]),
                        {
                            "item": a.item_ids[j],
                            "period": t,
                            "layer": "period",
                            "multiplier": float(report.lambda_period[j, t]),
                            "slack": float(slack_per[j, t]),
                        },
                    )
                )
        if a.T > 1 and tot_prod[j] > tol:
            entries.append(
                (
                    float(tot_prod[j]),
                    {
                        "item": a.item_ids[j],
                        "layer": "total",
                        "multiplier": float(report.lambda_total[j]),
                        "slack": float(slack_tot[j]),
                    },
                )
            )
    return CheckRecord(
        check="price-complementarity",
        applicable=True,
        passed=bool(worst <= tol),
        max_residual=worst,
        witnesses=_top_witnesses(entries),
    )


def audit_ceei_properties(
    inst: MarketInstance, report: SolveReport, tol: float = AUDIT_RTOL
) -> CheckRecord:
    """Budget-scaled envy-freeness and proportionality (zero demands, T = 1)."""
    a = _checked_arrays(inst, report)
    zero_demand = bool((a.demand == 0).all())
    gamma = getattr(report, "gamma", 0.0) or 0.0
    if not (
        zero_demand and a.T == 1 and getattr(report, "prices", None) is not None and gamma == 0.0
    ):
        return CheckRecord("ceei", False, True, 0.0, [])
    x2 = report.x[:, :, 0]  # (n, m)
    own = np.einsum("ij,ij->i", a.values, x2)  # value of own bundle
    cross = a.values @ x2.T  # cross[i, k] = value to i of k's bundle
    scaled_own = own / a.budgets
    scaled_cross = cross / a.budgets[None, :]
    envy = scaled_cross - scaled_own[:, None]
    np.fill_diagonal(envy, 0.0)
    envy_resid = envy / np.maximum(1.0, np.abs(scaled_own))[:, None]
    share = (a.budgets / a.budgets.sum())[:, None] * (a.values * a.supply_period[:, 0]).sum(
        axis=1, keepdims=True
    )
    prop_resid = (share[:, 0] - own) / np.maximum(1.0, share[:, 0])

    entries: list[tuple[float, dict]] = []
    for i in range(a.n):
        for k in range(a.n):
            if i != k and envy_resid[i, k] > tol:
                entries.append(
                    (
                        float(envy_resid[i, k]),
                        {
                            "kind": "envy",
                            "buyer": a.buyer_ids[i],
                            "envies": a.buyer_ids[k],
                            "own_scaled": float(scaled_own[i]),
                            "other_scaled": float(scaled_cross[i, k]),
                        },
                    )
                )
        if prop_resid[i] > tol:
            entries.append(
                (
                    float(prop_resid[i]),
                    {
                        "kind": "proportionality",
                        "buyer": a.buyer_ids[i],
                        "utility": float(own[i]),
                        "fair_share": float(share[i, 0]),
                    },
                )
            )
    worst = max(float(envy_resid.max()), float(prop_resid.max()), 0.0)
    return CheckRecord(
        check="ceei",
        applicable=True,
        passed=bool(worst <= tol),
        max_residual=worst,
        witnesses=_top_witnesses(entries),
    )


def audit_claim_totals(
    inst: MarketInstance, report, tol: float = AUDIT_RTOL
) -> CheckRecord:
    """Unit-valuation accounting: utilities sum to usable supply minus demand.

    Applicable when every stored valuation is 1, every item is valued by at
    least one buyer, and every resolved budget is 1; then each usable supply
    unit contributes exactly one unit of value at any non-wasteful optimum,
    so total surplus equals sum_j min(s_j, sum_t s_jt) - sum_i d_i.
    """
    a = _checked_arrays(inst, report)
    every_item_valued = bool(a.adjacency.any(axis=0).all()) if a.m else False
    unit_budgets = bool((a.budgets == 1.0).all())
    if not (inst.is_binary and every_item_valued and unit_budgets):
        return CheckRecord("claim-totals", False, True, 0.0, [])
    pp = surplus_per_period(inst, report.x)
    total = float(pp.sum())
    claim = float(a.usable_supply.sum() - a.demand.sum())
    resid = abs(total - claim) / max(1.0, abs(claim))
    witnesses = []
    if resid > tol:
        witnesses.append({"utilities_total": total, "claim": claim})
    return CheckRecord(
        check="claim-totals",
        applicable=True,
        passed=bool(resid <= tol),
        max_residual=resid,
        witnesses=witnesses,
    )


def run_all_audits(result, tol: float = AUDIT_RTOL) -> AuditReport:
    """Run every audit that applies to a program report or leximin result.

    Price-based audits are reported as not applicable when the result carries
    no price system (leximin allocations are certified by their stage LPs,
    not by prices).
    """
    inst = result.instance
    x = result.x
    records = [audit_feasibility(inst, x)]
    has_prices = getattr(result, "prices", None) is not None
    if has_prices:
        records.append(audit_bang_per_buck(inst, result, tol=tol))
        records.append(audit_budget_identity(inst, result, tol=tol))
        records.append(audit_price_complementarity(inst, result, tol=tol))
        records.append(audit_ceei_properties(inst, result, tol=tol))
    else:
        records.append(CheckRecord("bang-per-buck", False, True, 0.0, []))
        records.append(CheckRecord("budget-identity", False, True, 0.0, []))
        records.append(CheckRecord("price-complementarity", False, True, 0.0, []))
        records.append(CheckRecord("ceei", False, True, 0.0, []))
    records.append(audit_claim_totals(inst, result, tol=tol))
    return AuditReport(records=records)


def compare_solutions(a_result, b_result, *, per_period: bool = False) -> dict:
    """Compare two solutions of the same underlying market.

    Sorts the two utility profiles and compares them entrywise; the
    solutions are equivalent when the largest sorted-profile gap is at most
    1e-4.  By default profiles are aggregate (per-buyer) surpluses; with
    per_period=True they are the flattened (buyer, period) surpluses, the
    right notion for per-period component structures.

    Raises InstanceMismatch when the two results describe different markets
    (ids, horizon, or valuations differ); budgets may differ, since comparing
    budget modes is a primary use.
    """
    ia, ib = a_result.instance, b_result.instance
    aa, ab = arrays(ia), arrays(ib)
    if (
        aa.buyer_ids != ab.buyer_ids
        or aa.item_ids != ab.item_ids
        or aa.T != ab.T
        or ia.valuations != ib.valuations
    ):
        raise InstanceMismatch("results describe different markets")
    xa, xb = np.asarray(a_result.x), np.asarray(b_result.x)
    ua = a_result.utilities.per_period.sum(axis=1)
    ub = b_result.utilities.per_period.sum(axis=1)
    if per_period:
        profile_a = np.sort(a_result.utilities.per_period, axis=None)
        profile_b = np.sort(b_result.utilities.per_period, axis=None)
    else:
        profile_a = np.sort(ua)
        profile_b = np.sort(ub)
    gap = float(np.abs(profile_a - profile_b).max())
    return {
        "equivalent": bool(gap <= EQUIVALENCE_TOL),
        "max_profile_gap": gap,
        "allocation_max_diff": float(np.abs(xa - xb).max()),
        "allocation_l1": float(np.abs(xa - xb).sum()),
        "utility_max_diff": float(np.abs(ua - ub).max()),
        "utilities_a": [float(v) for v in ua],
        "utilities_b": [float(v) for v in ub],
        "buyers": list(aa.buyer_ids),
    }
