"""Staged leximin allocation over budget-weighted surplus powers.

The objective ranks allocations by the sorted vector of r_c = u_c ** B_c,
where u_c is the surplus of component c (a buyer, or a (buyer, period) pair)
and B_c its budget.  Each stage maximizes the minimum weighted log value
B_c * log(u_c) over the still-free components; components that provably
cannot exceed the stage optimum — certified by a per-component maximization
probe against the stage floors — are frozen at it, and the loop continues on
the rest.  The final stage's allocation realizes the leximin-optimal profile.

All stage and probe subproblems are linear programs, so the procedure is
exact up to LP tolerance and needs no convex backend.
"""

from __future__ import annotations

import enum
import math
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
from .errors import AssumptionViolated, ValidationFailed
from .programs import ProgramKind

FREEZE_RTOL = 1e-7  # slack above the stage floor a probe may show and still freeze
MAX_STAGES_FACTOR = 2  # defensive cap on stages, times the component count


class LeximinMode(str, enum.Enum):
    SINGLE = "single"  # one component per buyer, single period
    TIME_SUM = "time_sum"  # one component per buyer, surplus summed over periods
    TIME_INDEXED = "time_indexed"  # one component per (buyer, period)

    def __str__(self) -> str:
        return self.value


#: which leximin component structure matches each log-surplus program
MODE_FOR_PROGRAM = {
    ProgramKind.EG: LeximinMode.SINGLE,
    ProgramKind.EG_DEMAND: LeximinMode.SINGLE,
    ProgramKind.EG_TIME_SUM: LeximinMode.TIME_SUM,
    ProgramKind.EG_TIME_GEO_MEAN: LeximinMode.TIME_INDEXED,
}


@dataclass
class StageRecord:
    """One stage: its optimum on the r scale and the components frozen there."""

    t_star: float  # stage optimum, weighted log scale
    optimum: float  # exp(t_star) = u ** B for every component frozen here
    frozen: tuple  # buyer ids, or (buyer id, period) pairs

    def key(self) -> float:
        return self.optimum


@dataclass
class StageState:
    """Everything one leximin stage knows when it must decide whom to freeze."""

    instance: MarketInstance  # budgets resolved
    free: list  # components still unfrozen (indices or (index, period))
    floors: dict  # component -> surplus floor locked by earlier stages
    stage_floor: dict  # component -> surplus implied by this stage's optimum
    tight_set: tuple  # components whose weighted log value sits at the optimum
    per_period: bool


@dataclass
class LeximinResult:
    """Leximin allocation, the stage ladder, and per-component values."""

    mode: LeximinMode
    instance: MarketInstance  # budgets resolved
    x: np.ndarray  # (n, m, T)
    stages: list[StageRecord]
    utilities: UtilityProfile
    values: dict  # component key -> linear surplus at x
    r_values: dict  # component key -> surplus ** budget at x
    converged: bool
    trace: list[str] = field(default_factory=list)

    @property
    def budget_mode(self) -> str:
        return self.instance.budget_mode


def _component_key(a, comp):
    if isinstance(comp, tuple):
        return (a.buyer_ids[comp[0]], comp[1])
    return a.buyer_ids[comp]


def freeze_critical(state: StageState) -> list:
    """Return the components certified unable to exceed the stage optimum.

    A single tight component is frozen outright: the stage maximized its
    value subject to the earlier floors.  With several tight components,
    each is probed — its surplus maximized while every other free component
    is held at the stage floor — and frozen only when the probe shows no
    improvement beyond FREEZE_RTOL.  Tight components whose probes improve
    stay free, and the list may be empty when every probe shows slack.
    """
    if len(state.tight_set) == 1:
        return list(state.tight_set)
    frozen: list = []
    for comp in state.tight_set:
        probe_floors = dict(state.floors)
        for other in state.free:
            if other != comp:
                probe_floors[other] = state.stage_floor[other]
        probe_max, _ = engine.probe_component_max(
            state.instance, comp, probe_floors, per_period=state.per_period
        )
        slack = probe_max - state.stage_floor[comp]
        if slack <= FREEZE_RTOL * max(1.0, abs(state.stage_floor[comp])):
            frozen.append(comp)
    return frozen


def leximin_solve(
    inst: MarketInstance,
    mode: LeximinMode | str = LeximinMode.SINGLE,
    *,
    seed: int = 0,
) -> LeximinResult:
    """Compute the leximin-optimal allocation for the given component structure.

    Args:
        inst: market instance (any budget mode; budgets are resolved here).
        mode: component structure; "single" requires a one-period instance.
        seed: recorded for reproducibility; every stage is a deterministic LP.

    Raises:
        ValidationFailed: structurally invalid instance, or mode "single"
            on a multi-period instance.
        AssumptionViolated: no feasible allocation gives strictly positive
            surplus to every component, so weighted log values are undefined.
    """
    mode = LeximinMode(mode)
    violations = validate_instance(inst)
    if mode is LeximinMode.SINGLE and inst.periods != 1:
        from .core import Violation

        violations.append(
            Violation(
                "multi-period-instance",
                "periods",
                f"leximin mode single is single-period; instance has {inst.periods}",
            )
        )
    if violations:
        raise ValidationFailed(violations)
    resolved = resolve_budgets(inst)
    a = arrays(resolved)
    per_period = mode is LeximinMode.TIME_INDEXED

    assumption = check_assumption_pos(resolved, per_period=per_period)
    if not assumption.holds:
        raise AssumptionViolated(
            "no feasible allocation gives strictly positive surplus for "
            f"every {'buyer-period' if per_period else 'buyer'} "
            f"(best margin {assumption.margin:.6g})",
            margin=assumption.margin,
            components=list(assumption.min_components),
        )

    if per_period:
        free = [(i, t) for i in range(a.n) for t in range(a.T)]
    else:
        free = list(range(a.n))
    budgets = {c: float(a.budgets[c[0] if isinstance(c, tuple) else c]) for c in free}

    floors: dict = {}
    stages: list[StageRecord] = []
    trace = [f"leximin mode={mode} components={len(free)} seed={seed}"]
    x = None
    max_stages = MAX_STAGES_FACTOR * len(free) + 1

    while free and len(stages) < max_stages:
        res = engine.maxmin_linear(
            resolved, free=free, floors=floors, per_period=per_period, log_scale=True
        )
        t_star = res.t_star
        x = res.x
        stage_floor = {c: math.exp(t_star / budgets[c]) for c in free}

        frozen = freeze_critical(
            StageState(
                instance=resolved,
                free=free,
                floors=floors,
                stage_floor=stage_floor,
                tight_set=res.tight_set,
                per_period=per_period,
            )
        )
        if not frozen and res.tight_set:
            # numerically every probe showed slack; pin the most constrained
            def probe_ceiling(comp):
                probe_floors = dict(floors)
                for other in free:
                    if other != comp:
                        probe_floors[other] = stage_floor[other]
                value, _ = engine.probe_component_max(
                    resolved, comp, probe_floors, per_period=per_period
                )
                return value

            frozen = [min(res.tight_set, key=probe_ceiling)]
            trace.append("stage fallback: froze smallest probe maximum")
        if not frozen:
            # tight set empty can only happen through tie-tolerance underflow
            frozen = [min(free, key=lambda c: budgets[c] * math.log(res.values[c]))]
            trace.append("stage fallback: froze worst valued component")

        stages.append(
            StageRecord(
                t_star=float(t_star),
                optimum=float(math.exp(t_star)),
                frozen=tuple(_component_key(a, c) for c in sorted(frozen)),
            )
        )
        trace.append(
            f"stage {len(stages)}: t*={t_star:.12g} tight={len(res.tight_set)} "
            f"froze {len(frozen)} of {len(free)}"
        )
        for comp in free:
            floors[comp] = stage_floor[comp]
        free = [c for c in free if c not in frozen]

    converged = not free
    if free:
        trace.append(f"stage cap reached with {len(free)} components unfrozen")

    utilities = UtilityProfile.compute(resolved, x, rule="sum")
    pp = utilities.per_period
    agg = utilities.aggregate
    values = {}
    r_values = {}
    comps = (
        [(i, t) for i in range(a.n) for t in range(a.T)] if per_period else list(range(a.n))
    )
    for c in comps:
        key = _component_key(a, c)
        u = float(pp[c[0], c[1]] if isinstance(c, tuple) else agg[c])
        values[key] = u
        r_values[key] = float(u ** budgets[c]) if u > 0 else 0.0

    return LeximinResult(
        mode=mode,
        instance=resolved,
        x=x,
        stages=stages,
        utilities=utilities,
        values=values,
        r_values=r_values,
        converged=converged,
        trace=trace,
    )


def leximin_for_program(
    inst: MarketInstance, kind: ProgramKind | str, *, seed: int = 0
) -> LeximinResult:
    """Run leximin with the component structure matching a program kind.

    eg-smooth has no leximin counterpart; callers must reject it upstream.
    """
    kind = ProgramKind(kind)
    mode = MODE_FOR_PROGRAM.get(kind)
    if mode is None:
        raise ValueError(f"program {kind} has no leximin component structure")
    return leximin_solve(inst, mode, seed=seed)


def sorted_r_profile(result: LeximinResult) -> list[float]:
    """The sorted (ascending) vector of r values the leximin order maximizes."""
    return sorted(result.r_values.values())
