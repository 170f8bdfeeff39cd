"""Fair work allocation: market programs with hard demands and two supply layers.

Public surface:

* core        — instance model, validation, budget modes, utilities, the
                positivity check.
* programs    — the five budget-weighted log-surplus programs and SolveReport.
* leximin     — staged leximin over budget-weighted surplus powers.
* audit       — independent equilibrium/fairness certificates.
* scenarios   — instance generator, robustness evaluation, gamma sweeps.
* serialize   — canonical JSON/CSV round-tripping.
* cli         — the fairwork command-line tool.
"""

from .audit import (
    AUDIT_RTOL,
    AuditReport,
    CheckRecord,
    audit_bang_per_buck,
    audit_budget_identity,
    audit_ceei_properties,
    audit_claim_totals,
    audit_feasibility,
    audit_price_complementarity,
    compare_solutions,
    run_all_audits,
)
from .core import (
    AssumptionCheck,
    Buyer,
    Item,
    MarketInstance,
    UtilityProfile,
    ValuationMatrix,
    Violation,
    aggregate_utilities,
    allocation_violations,
    check_assumption_pos,
    resolve_budgets,
    surplus_per_period,
    validate_instance,
)
from .engine import (
    KKT_TOL,
    MaxMinResult,
    ObjectiveSpec,
    SolveResult,
    central_difference_gradient,
    maximize,
    maxmin_linear,
    probe_component_max,
)
from .errors import (
    AssumptionViolated,
    BadGamma,
    DomainGuardViolated,
    EqualToDemandWithZeroDemand,
    FairworkError,
    Infeasible,
    InstanceMismatch,
    MissingPrices,
    NotConverged,
    ShapeMismatch,
    UnsatisfiableConfig,
    ValidationFailed,
)
from .leximin import (
    LeximinMode,
    LeximinResult,
    StageRecord,
    StageState,
    freeze_critical,
    leximin_for_program,
    leximin_solve,
    sorted_r_profile,
)
from .programs import (
    PenaltyKind,
    ProgramKind,
    SolveReport,
    build_objective,
    price_system,
    solve_eg,
    solve_eg_demand,
    solve_eg_smooth,
    solve_eg_time_geo_mean,
    solve_eg_time_sum,
    solve_program,
)
from .scenarios import (
    GeneratorConfig,
    RealizationBatch,
    RobustnessSummary,
    SweepRow,
    draw_realizations,
    evaluate_robustness,
    exclusive_pair_market,
    generate,
    sweep_gamma,
    sweep_monotonicity_violations,
)
from .serialize import (
    canonical_dumps,
    dump_instance,
    instance_from_payload,
    instance_to_payload,
    leximin_report_payload,
    load_instance,
    parse_instance,
    report_from_payload,
    save_instance,
    solve_report_payload,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
