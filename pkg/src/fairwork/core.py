"""Market data model: buyers with hard demands, items with two-layer supplies.

A market instance couples buyers (each with a budget and a per-period hard
demand) to items (each with per-period supply caps and an overall cap across
periods) through a sparse nonnegative valuation matrix.  Surplus is value
received minus hard demand; every solver in this package works in surplus
space, so demands act as disagreement points rather than constraints.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, replace

import numpy as np

from .errors import EqualToDemandWithZeroDemand, ShapeMismatch

FEASIBILITY_TOL = 1e-7  # absolute slack tolerated on supply rows and nonnegativity
POSITIVE_SURPLUS_TOL = 1e-7  # surplus counts as positive only above this
RECOMPUTE_RTOL = 1e-9  # utility profiles must reproduce to this relative error

BUDGET_MODES = ("explicit", "unit", "equal-to-demand")


@dataclass(frozen=True)
class Buyer:
    """One buyer: identifier, budget weight, and per-period hard demand."""

    id: str
    budget: float
    demand: tuple[float, ...]

    @property
    def total_demand(self) -> float:
        return float(sum(self.demand))


@dataclass(frozen=True)
class Item:
    """One item: per-period supply caps plus an overall cap across periods.

    Neither ordering between supply_total and the per-period sum is required;
    the binding layer simply depends on the instance.
    """

    id: str
    supply_per_period: tuple[float, ...]
    supply_total: float

    @property
    def usable_supply(self) -> float:
        """Largest amount allocatable across all periods under both layers."""
        return float(min(self.supply_total, sum(self.supply_per_period)))


@dataclass(frozen=True)
class ValuationMatrix:
    """Sparse nonnegative valuations: absent pairs are worth exactly zero.

    Stored edges are canonically sorted (buyer id, item id) triples with
    strictly positive values.
    """

    edges: tuple[tuple[str, str, float], ...]

    @classmethod
    def from_dict(cls, values: dict[tuple[str, str], float]) -> "ValuationMatrix":
        edges = tuple(sorted((b, i, float(v)) for (b, i), v in values.items()))
        return cls(edges=edges)

    def as_dict(self) -> dict[tuple[str, str], float]:
        return {(b, i): v for b, i, v in self.edges}

    def value(self, buyer_id: str, item_id: str) -> float:
        for b, i, v in self.edges:
            if b == buyer_id and i == item_id:
                return v
        return 0.0

    @property
    def is_binary(self) -> bool:
        """True when every stored value is 1, so dense values lie in {0, 1}."""
        return all(v == 1.0 for _, _, v in self.edges) and bool(self.edges)

    def is_bivalued(self, total_pairs: int | None = None) -> bool:
        """True when dense values take at most two distinct levels.

        total_pairs is the full buyer-count times item-count; when given and
        some pair is absent, the implicit zero counts as one of the levels.
        """
        distinct = {v for _, _, v in self.edges}
        if total_pairs is not None and len(self.edges) < total_pairs:
            distinct.add(0.0)
        return 0 < len(distinct) <= 2


@dataclass(frozen=True)
class MarketInstance:
    """A full market: buyers, items, valuations, horizon, and budget mode.

    demand_was_split records that a scalar total demand was split uniformly
    across periods at load time (surfaced in solver traces).
    """

    buyers: tuple[Buyer, ...]
    items: tuple[Item, ...]
    valuations: ValuationMatrix
    periods: int
    budget_mode: str = "explicit"
    demand_was_split: bool = False

    @property
    def n_buyers(self) -> int:
        return len(self.buyers)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def is_binary(self) -> bool:
        return self.valuations.is_binary

    @property
    def is_bivalued(self) -> bool:
        return self.valuations.is_bivalued(len(self.buyers) * len(self.items))


@dataclass(frozen=True)
class Violation:
    """One structural defect found by validate_instance (data, not an exception)."""

    code: str
    entity: str
    message: str


class InstanceArrays:
    """Dense numpy view of an instance, shared by every solver layer."""

    def __init__(self, inst: MarketInstance):
        self.n = len(inst.buyers)
        self.m = len(inst.items)
        self.T = inst.periods
        self.buyer_ids = [b.id for b in inst.buyers]
        self.item_ids = [it.id for it in inst.items]
        self.buyer_index = {b: k for k, b in enumerate(self.buyer_ids)}
        self.item_index = {i: k for k, i in enumerate(self.item_ids)}
        self.budgets = np.array([b.budget for b in inst.buyers], dtype=float)
        self.demand = np.array([b.demand for b in inst.buyers], dtype=float)
        self.supply_period = np.array(
            [it.supply_per_period for it in inst.items], dtype=float
        )
        self.supply_total = np.array([it.supply_total for it in inst.items], dtype=float)
        self.values = np.zeros((self.n, self.m))
        for b, i, v in inst.valuations.edges:
            if b in self.buyer_index and i in self.item_index:
                self.values[self.buyer_index[b], self.item_index[i]] = v
        self.adjacency = self.values > 0.0
        edge_rows = np.argwhere(self.adjacency)
        self.edge_buyer = edge_rows[:, 0]
        self.edge_item = edge_rows[:, 1]
        self.edge_value = self.values[self.edge_buyer, self.edge_item]
        self.n_edges = len(self.edge_buyer)

    @property
    def usable_supply(self) -> np.ndarray:
        """Per item, the most that both layers jointly allow across periods."""
        return np.minimum(self.supply_total, self.supply_period.sum(axis=1))


_ARRAYS_CACHE: "weakref.WeakKeyDictionary[MarketInstance, InstanceArrays]" = (
    weakref.WeakKeyDictionary()
)


def arrays(inst: MarketInstance) -> InstanceArrays:
    found = _ARRAYS_CACHE.get(inst)
    if found is None:
        found = InstanceArrays(inst)
        _ARRAYS_CACHE[inst] = found
    return found


def _finite(x: float) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


def validate_instance(inst: MarketInstance) -> list[Violation]:
    """Collect every structural defect; an empty list means the instance is valid."""
    out: list[Violation] = []
    T = inst.periods
    if not isinstance(T, int) or T < 1:
        out.append(Violation("bad-periods", "periods", f"periods must be >= 1, got {T!r}"))
        return out
    if inst.budget_mode not in BUDGET_MODES:
        out.append(
            Violation(
                "bad-budget-mode",
                "budget_mode",
                f"budget_mode must be one of {BUDGET_MODES}, got {inst.budget_mode!r}",
            )
        )

    seen: set[str] = set()
    for b in inst.buyers:
        if b.id in seen:
            out.append(Violation("duplicate-id", b.id, f"buyer id {b.id!r} appears twice"))
        seen.add(b.id)
        if not _finite(b.budget):
            out.append(Violation("nonfinite-number", f"{b.id}.budget", "budget must be finite"))
        elif b.budget < 0:
            out.append(Violation("negative-budget", f"{b.id}.budget", "budget must be >= 0"))
        elif inst.budget_mode == "explicit" and b.budget == 0:
            out.append(
                Violation(
                    "nonpositive-budget",
                    f"{b.id}.budget",
                    "explicit budgets must be > 0",
                )
            )
        if len(b.demand) != T:
            out.append(
                Violation(
                    "bad-length",
                    f"{b.id}.demand",
                    f"demand has length {len(b.demand)}, expected {T}",
                )
            )
            continue
        for t, d in enumerate(b.demand):
            if not _finite(d):
                out.append(
                    Violation("nonfinite-number", f"{b.id}.demand[{t}]", "demand must be finite")
                )
            elif d < 0:
                out.append(
                    Violation("negative-demand", f"{b.id}.demand[{t}]", "demand must be >= 0")
                )

    item_seen: set[str] = set()
    for it in inst.items:
        if it.id in item_seen or it.id in seen:
            out.append(Violation("duplicate-id", it.id, f"item id {it.id!r} appears twice"))
        item_seen.add(it.id)
        if not _finite(it.supply_total):
            out.append(
                Violation("nonfinite-number", f"{it.id}.supply_total", "supply must be finite")
            )
        elif it.supply_total <= 0:
            out.append(
                Violation("nonpositive-supply", f"{it.id}.supply_total", "supply must be > 0")
            )
        if len(it.supply_per_period) != T:
            out.append(
                Violation(
                    "bad-length",
                    f"{it.id}.supply_per_period",
                    f"supply_per_period has length {len(it.supply_per_period)}, expected {T}",
                )
            )
            continue
        for t, s in enumerate(it.supply_per_period):
            if not _finite(s):
                out.append(
                    Violation(
                        "nonfinite-number",
                        f"{it.id}.supply_per_period[{t}]",
                        "supply must be finite",
                    )
                )
            elif s <= 0:
                out.append(
                    Violation(
                        "nonpositive-supply",
                        f"{it.id}.supply_per_period[{t}]",
                        "supply must be > 0",
                    )
                )
        if (
            T == 1
            and _finite(it.supply_total)
            and _finite(it.supply_per_period[0])
            and not math.isclose(
                it.supply_total, it.supply_per_period[0], rel_tol=1e-12, abs_tol=0.0
            )
        ):
            out.append(
                Violation(
                    "supply-total-mismatch",
                    it.id,
                    "single-period instances must have supply_total equal to "
                    "supply_per_period[0]",
                )
            )

    pair_seen: set[tuple[str, str]] = set()
    for b, i, v in inst.valuations.edges:
        if b not in {x.id for x in inst.buyers}:
            out.append(Violation("unknown-buyer", b, f"valuation references unknown buyer {b!r}"))
        if i not in item_seen:
            out.append(Violation("unknown-item", i, f"valuation references unknown item {i!r}"))
        if (b, i) in pair_seen:
            out.append(
                Violation("duplicate-valuation", f"{b}/{i}", "valuation pair appears twice")
            )
        pair_seen.add((b, i))
        if not _finite(v):
            out.append(Violation("nonfinite-number", f"{b}/{i}", "valuation must be finite"))
        elif v <= 0:
            out.append(
                Violation(
                    "nonpositive-valuation",
                    f"{b}/{i}",
                    "stored valuations must be > 0 (absent pairs are zero)",
                )
            )
    return out


def resolve_budgets(inst: MarketInstance) -> MarketInstance:
    """Materialize the budget mode into explicit per-buyer budgets.

    unit sets every budget to 1; equal-to-demand sets each budget to the
    buyer's total demand and rejects zero-demand buyers; explicit instances
    pass through unchanged.  Returns a new instance, input untouched, and is
    idempotent for every mode.
    """
    if inst.budget_mode == "explicit":
        return inst
    if inst.budget_mode == "unit":
        buyers = tuple(replace(b, budget=1.0) for b in inst.buyers)
        return replace(inst, buyers=buyers)
    if inst.budget_mode == "equal-to-demand":
        for b in inst.buyers:
            if b.total_demand <= 0.0:
                raise EqualToDemandWithZeroDemand(
                    f"buyer {b.id!r} has zero total demand, so equal-to-demand "
                    "budgets are undefined",
                    field=f"{b.id}.demand",
                )
        buyers = tuple(replace(b, budget=b.total_demand) for b in inst.buyers)
        return replace(inst, buyers=buyers)
    raise ValueError(f"unknown budget mode {inst.budget_mode!r}")


def surplus_per_period(inst: MarketInstance, x: np.ndarray) -> np.ndarray:
    """Per (buyer, period) surplus: value received in the period minus demand."""
    a = arrays(inst)
    x = np.asarray(x, dtype=float)
    if x.shape != (a.n, a.m, a.T):
        raise ShapeMismatch(
            f"allocation shape {x.shape} does not match instance "
            f"({a.n}, {a.m}, {a.T})",
            field="allocation",
        )
    return np.einsum("ij,ijt->it", a.values, x) - a.demand


def aggregate_utilities(per_period: np.ndarray, rule: str) -> np.ndarray:
    """Collapse per-period surpluses to one value per buyer.

    rule "sum" adds periods; rule "geo_mean" takes the geometric mean and
    returns 0 for any buyer with a nonpositive period (the geometric mean is
    only meaningful on positive surpluses).
    """
    if rule == "sum":
        return per_period.sum(axis=1)
    if rule == "geo_mean":
        out = np.zeros(per_period.shape[0])
        ok = (per_period > 0).all(axis=1)
        if ok.any():
            out[ok] = np.exp(np.log(per_period[ok]).mean(axis=1))
        return out
    raise ValueError(f"unknown aggregation rule {rule!r}")


@dataclass
class UtilityProfile:
    """Per-period surpluses plus their aggregate, under a named rule."""

    per_period: np.ndarray  # (n_buyers, periods)
    aggregate: np.ndarray  # (n_buyers,)
    rule: str

    @classmethod
    def compute(cls, inst: MarketInstance, x: np.ndarray, rule: str = "sum") -> "UtilityProfile":
        pp = surplus_per_period(inst, x)
        return cls(per_period=pp, aggregate=aggregate_utilities(pp, rule), rule=rule)


def allocation_violations(
    inst: MarketInstance, x: np.ndarray, tol: float = FEASIBILITY_TOL
) -> list[Violation]:
    """Feasibility defects of an allocation tensor against the instance."""
    a = arrays(inst)
    x = np.asarray(x, dtype=float)
    out: list[Violation] = []
    if x.shape != (a.n, a.m, a.T):
        out.append(
            Violation(
                "shape-mismatch",
                "allocation",
                f"shape {x.shape}, expected ({a.n}, {a.m}, {a.T})",
            )
        )
        return out
    if not np.isfinite(x).all():
        out.append(Violation("nonfinite-number", "allocation", "allocation has NaN or Inf"))
        return out
    if (x < -tol).any():
        i, j, t = np.unravel_index(np.argmin(x), x.shape)
        out.append(
            Violation(
                "negative-allocation",
                f"{a.buyer_ids[i]}/{a.item_ids[j]}@{t}",
                f"negative entry {x[i, j, t]:.3e}",
            )
        )
    off_edge = np.abs(x) * (~a.adjacency)[:, :, None]
    if (off_edge > tol).any():
        i, j, t = np.unravel_index(np.argmax(off_edge), x.shape)
        out.append(
            Violation(
                "mass-off-edge",
                f"{a.buyer_ids[i]}/{a.item_ids[j]}@{t}",
                "allocation on a zero-valuation pair must be exactly 0",
            )
        )
    period_load = x.sum(axis=0)  # (m, T)
    over = period_load - a.supply_period
    if (over > tol).any():
        j, t = np.unravel_index(np.argmax(over), over.shape)
        out.append(
            Violation(
                "period-supply-exceeded",
                f"{a.item_ids[j]}@{t}",
                f"period load exceeds cap by {over[j, t]:.3e}",
            )
        )
    total_load = period_load.sum(axis=1)
    over_tot = total_load - a.supply_total
    if (over_tot > tol).any():
        j = int(np.argmax(over_tot))
        out.append(
            Violation(
                "total-supply-exceeded",
                a.item_ids[j],
                f"overall load exceeds cap by {over_tot[j]:.3e}",
            )
        )
    return out


@dataclass
class AssumptionCheck:
    """Result of the positivity check: best worst-case surplus and its witness."""

    margin: float
    witness: np.ndarray  # feasible allocation achieving the margin
    per_period: bool
    min_components: tuple  # buyer ids, or (buyer id, period) pairs, at the minimum

    @property
    def feasible_margin(self) -> float:
        """The margin under its reporting name: best achievable worst surplus."""
        return self.margin

    @property
    def holds(self) -> bool:
        return self.margin > POSITIVE_SURPLUS_TOL


def check_assumption_pos(inst: MarketInstance, per_period: bool = False) -> AssumptionCheck:
    """Maximize the worst surplus over feasible allocations.

    With per_period False the margin is the worst aggregate surplus across
    buyers; with per_period True it is the worst single (buyer, period)
    surplus, which is what the per-period log objectives need.  A margin at
    or below zero is reported, never raised.
    """
    from . import engine  # local import: engine depends on this module's types

    result = engine.maxmin_linear(inst, per_period=per_period, log_scale=False)
    a = arrays(inst)
    pp = surplus_per_period(inst, result.x)
    if per_period:
        values = pp
        flat = [
            (a.buyer_ids[i], t)
            for i in range(a.n)
            for t in range(a.T)
            if values[i, t] <= result.t_star + 1e-9
        ]
    else:
        agg = pp.sum(axis=1)
        flat = [a.buyer_ids[i] for i in range(a.n) if agg[i] <= result.t_star + 1e-9]
    return AssumptionCheck(
        margin=float(result.t_star),
        witness=result.x,
        per_period=per_period,
        min_components=tuple(flat),
    )
