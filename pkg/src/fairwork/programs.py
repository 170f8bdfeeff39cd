"""The budget-weighted log-surplus programs and their solve reports.

Five program kinds share one engine:

* eg           — classic budget-weighted log utilities; zero demands, one period.
* eg-demand    — log of (value minus hard demand); one period.
* eg-time-sum  — log of surplus aggregated across periods, two supply layers.
* eg-time-geo  — per-period logs weighted budget/periods (geometric-mean form).
* eg-smooth    — per-period logs at full budget weight minus gamma times a
                 smoothness penalty on consecutive-period allocation changes.

Each solve validates the instance, materializes the budget mode, checks that
some feasible allocation gives strictly positive surplus wherever the
objective takes a log, and returns a SolveReport carrying the allocation,
both supply-layer multiplier vectors, item prices, utilities, and the
independently recomputed KKT residuals.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .core import (
    MarketInstance,
    UtilityProfile,
    arrays,
    check_assumption_pos,
    resolve_budgets,
    validate_instance,
)
from .engine import ObjectiveSpec, SolveResult
from .errors import (
    AssumptionViolated,
    BadGamma,
    MissingPrices,
    NotConverged,
    ValidationFailed,
)

KL_EPS_SCALE = 1e-6  # KL smoothing epsilon = scale * max per-period supply cap


class ProgramKind(str, enum.Enum):
    EG = "eg"
    EG_DEMAND = "eg-demand"
    EG_TIME_SUM = "eg-time-sum"
    EG_TIME_GEO_MEAN = "eg-time-geo"
    EG_SMOOTH = "eg-smooth"

    def __str__(self) -> str:  # argparse/report spelling
        return self.value


class PenaltyKind(str, enum.Enum):
    ABS_DEV = "absdev"
    KL = "kl"

    def __str__(self) -> str:
        return self.value


#: aggregation rule used to report a single utility per buyer
AGGREGATION_RULE = {
    ProgramKind.EG: "sum",
    ProgramKind.EG_DEMAND: "sum",
    ProgramKind.EG_TIME_SUM: "sum",
    ProgramKind.EG_TIME_GEO_MEAN: "geo_mean",
    ProgramKind.EG_SMOOTH: "geo_mean",
}

#: programs whose log terms are per (buyer, period) rather than per buyer
PER_PERIOD_LOGS = {ProgramKind.EG_TIME_GEO_MEAN, ProgramKind.EG_SMOOTH}


@dataclass
class SolveReport:
    """Everything a solve produces, in solver-native numpy form."""

    program: ProgramKind
    instance: MarketInstance  # budgets resolved
    x: np.ndarray  # (n, m, T)
    prices: np.ndarray  # (m, T) item prices: lambda_period + lambda_total
    lambda_period: np.ndarray  # (m, T)
    lambda_total: np.ndarray  # (m,)
    utilities: UtilityProfile
    objective_value: float
    kkt: dict[str, float]
    gamma: float
    penalty: PenaltyKind | None
    total_variation: float
    penalty_value: float
    converged: bool
    solver_name: str
    iterations: int
    variation_band: float | None = None
    trace: list[str] = field(default_factory=list)

    @property
    def budget_mode(self) -> str:
        return self.instance.budget_mode


def build_objective(
    inst: MarketInstance,
    kind: ProgramKind,
    gamma: float = 0.0,
    penalty: PenaltyKind | None = None,
) -> ObjectiveSpec:
    """Construct the objective oracle for a validated, budget-resolved instance."""
    a = arrays(inst)
    kind = ProgramKind(kind)
    if penalty is not None:
        penalty = PenaltyKind(penalty)
    weights = a.budgets.copy()
    if kind is ProgramKind.EG_TIME_GEO_MEAN:
        weights = weights / a.T
    kl_eps = 0.0
    if penalty is PenaltyKind.KL:
        kl_eps = KL_EPS_SCALE * float(a.supply_period.max())
    return ObjectiveSpec(
        inst=inst,
        kind=kind.value,
        per_period=kind in PER_PERIOD_LOGS,
        weights=weights,
        gamma=float(gamma),
        penalty=penalty.value if penalty is not None else None,
        kl_eps=kl_eps,
    )


def solve_program(
    inst: MarketInstance,
    kind: ProgramKind | str,
    *,
    gamma: float = 0.0,
    penalty: PenaltyKind | str | None = None,
    tol: float = engine.KKT_TOL,
    seed: int = 0,
    variation_band: float | None = None,
) -> SolveReport:
    """Validate, resolve budgets, check positivity, solve, and report.

    Args:
        inst: the market instance (any budget mode).
        kind: which program to solve.
        gamma: smoothness penalty weight (eg-smooth only; 0 elsewhere).
        penalty: penalty kind, required when gamma > 0.
        tol: KKT residual bound the solution must meet for converged=True.
        seed: recorded for reproducibility; solves are deterministic.
        variation_band: optional hard band r in (0, 1] on per-transition
            allocation change, x_{t+1} in [r * x_t, (2 - r) * x_t].

    Raises:
        ValidationFailed: structurally invalid instance, or a single-period
            program applied to a multi-period instance, or eg with demands.
        BadGamma: negative gamma, or penalty arguments on the wrong program.
        AssumptionViolated: no feasible allocation keeps every log argument
            strictly positive.
    """
    kind = ProgramKind(kind)
    if penalty is not None:
        penalty = PenaltyKind(penalty)
    _check_structure(inst, kind)
    _check_gamma(kind, gamma, penalty)
    if variation_band is not None and not (0.0 < variation_band <= 1.0):
        raise BadGamma(
            f"variation band must lie in (0, 1], got {variation_band!r}",
            field="--variation-band",
        )
    resolved = resolve_budgets(inst)

    per_period = kind in PER_PERIOD_LOGS
    assumption = check_assumption_pos(resolved, per_period=per_period)
    if not assumption.holds:
        raise AssumptionViolated(
            "no feasible allocation gives strictly positive surplus for "
            f"every {'buyer-period' if per_period else 'buyer'} "
            f"(best margin {assumption.margin:.6g})",
            margin=assumption.margin,
            components=list(assumption.min_components),
        )

    spec = build_objective(resolved, kind, gamma=gamma, penalty=penalty)
    result: SolveResult = engine.maximize(
        spec, resolved, tol=tol, seed=seed, variation_band=variation_band
    )
    utilities = UtilityProfile.compute(resolved, result.x, rule=AGGREGATION_RULE[kind])
    return SolveReport(
        program=kind,
        instance=resolved,
        x=result.x,
        prices=result.lambda_period + result.lambda_total[:, None],
        lambda_period=result.lambda_period,
        lambda_total=result.lambda_total,
        utilities=utilities,
        objective_value=result.objective_value,
        kkt=result.kkt,
        gamma=float(gamma),
        penalty=penalty,
        total_variation=spec.total_variation(result.x),
        penalty_value=spec.penalty_value(result.x),
        converged=result.converged,
        solver_name=result.solver_name,
        iterations=result.iterations,
        variation_band=variation_band,
        trace=list(result.trace),
    )


def _check_structure(inst: MarketInstance, kind: ProgramKind) -> None:
    from .core import Violation

    violations = validate_instance(inst)
    if kind in (ProgramKind.EG, ProgramKind.EG_DEMAND) and inst.periods != 1:
        violations.append(
            Violation(
                "multi-period-instance",
                "periods",
                f"program {kind} is single-period; instance has {inst.periods}",
            )
        )
    if kind is ProgramKind.EG and any(b.total_demand > 0 for b in inst.buyers):
        violations.append(
            Violation(
                "nonzero-demand",
                "demand",
                "program eg assumes zero demands; use eg-demand",
            )
        )
    if violations:
        raise ValidationFailed(violations)


def _check_gamma(kind: ProgramKind, gamma: float, penalty: PenaltyKind | None) -> None:
    if not np.isfinite(gamma) or gamma < 0.0:
        raise BadGamma(f"gamma must be finite and >= 0, got {gamma!r}", field="--gamma")
    if kind is not ProgramKind.EG_SMOOTH:
        if gamma != 0.0:
            raise BadGamma(
                f"program {kind} takes no smoothness penalty; gamma must be 0",
                field="--gamma",
            )
        if penalty is not None:
            raise BadGamma(f"program {kind} takes no smoothness penalty", field="--penalty")
    elif gamma > 0.0 and penalty is None:
        raise BadGamma("gamma > 0 requires a penalty kind", field="--penalty")


def solve_eg(inst: MarketInstance, **kw) -> SolveReport:
    return solve_program(inst, ProgramKind.EG, **kw)


def solve_eg_demand(inst: MarketInstance, **kw) -> SolveReport:
    return solve_program(inst, ProgramKind.EG_DEMAND, **kw)


def solve_eg_time_sum(inst: MarketInstance, **kw) -> SolveReport:
    return solve_program(inst, ProgramKind.EG_TIME_SUM, **kw)


def solve_eg_time_geo_mean(inst: MarketInstance, **kw) -> SolveReport:
    return solve_program(inst, ProgramKind.EG_TIME_GEO_MEAN, **kw)


def solve_eg_smooth(
    inst: MarketInstance,
    penalty: PenaltyKind | str | None,
    gamma: float,
    **kw,
) -> SolveReport:
    return solve_program(inst, ProgramKind.EG_SMOOTH, gamma=gamma, penalty=penalty, **kw)


def price_system(report: SolveReport) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Prices and both multiplier layers, guarded for downstream audits.

    Raises:
        NotConverged: the solve did not meet its KKT tolerance, so the duals
            cannot be trusted as equilibrium prices.
        MissingPrices: the report carries no price system at all.
    """
    if report.prices is None:
        raise MissingPrices("report carries no price system")
    if not report.converged:
        raise NotConverged(
            "solve did not meet its KKT tolerance; prices are not certified",
            kkt=dict(report.kkt),
        )
    return report.prices, report.lambda_period, report.lambda_total
