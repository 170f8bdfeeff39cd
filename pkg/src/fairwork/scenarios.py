"""Scenario lab: instance generation, demand-shock robustness, gamma sweeps.

The generator builds markets with trending per-period demands and supplies
sized from those demands, so the positivity margin is controlled by a single
supply factor.  Large configurations embed two sentinel structures used by
the study scripts: an exclusive buyer-item pair (the buyer values only that
item and nobody else values it) and a zero-demand buyer.

Robustness evaluation freezes an allocation, redraws demands around their
nominal values (multiplicative lognormal noise plus occasional spikes), and
reports shortfall and coverage per buyer and realization.

Gamma sweeps re-solve the smoothness-penalized program along an increasing
penalty path, recording objective, total variation, and penalty value per
point, continuing past failed points.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Buyer, Item, MarketInstance, ValuationMatrix, arrays
from .errors import UnsatisfiableConfig
from .programs import PenaltyKind, ProgramKind, SolveReport, solve_program

TRENDS = ("flat", "upward", "downward", "mixed")
VALUATION_MODES = ("binary", "bivalued", "general")


def _thread_count() -> int:
    raw = os.environ.get("FAIRWORK_THREADS", "").strip()
    if not raw:
        return 0
    try:
        n = int(raw)
    except ValueError:
        return 0
    return max(0, n)


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the scenario generator; every draw is seed-deterministic."""

    n_buyers: int
    n_items: int
    periods: int = 1
    density: float = 0.5  # fraction of items each buyer values, >= 1 item
    valuation_mode: str = "general"  # binary (all 1) | bivalued (high/low) | general
    value_range: tuple[float, float] = (0.5, 2.0)  # uniform range, or (low, high) pair
    demand_level: float = 0.3  # mean per-period demand scale
    trend: str = "flat"  # flat | upward | downward | mixed
    supply_factor: float = 1.5  # supplies scale with total demand by this factor
    budget_range: tuple[float, float] = (0.5, 2.0)
    budget_mode: str = "explicit"
    include_exclusive_pair: bool | None = None  # default: only when n_buyers >= 10
    include_zero_demand: bool | None = None  # default: only when n_buyers >= 10
    seed: int = 0


def _trend_profile(trend: str, T: int, rng: np.random.Generator) -> np.ndarray:
    if trend == "flat":
        return np.ones(T)
    if trend == "upward":
        return np.linspace(0.7, 1.3, T)
    if trend == "downward":
        return np.linspace(1.3, 0.7, T)
    if trend == "mixed":
        choice = rng.integers(0, 3)
        return _trend_profile(("flat", "upward", "downward")[choice], T, rng)
    raise UnsatisfiableConfig(f"unknown trend {trend!r}", field="trend")


def generate(config: GeneratorConfig) -> MarketInstance:
    """Draw one market instance from the configuration.

    Raises:
        UnsatisfiableConfig: impossible shape (no buyers/items, density that
            rounds to zero items, bad trend) or budget mode equal-to-demand
            combined with a zero-demand sentinel buyer.
    """
    n, m, T = config.n_buyers, config.n_items, config.periods
    if n < 1 or m < 1 or T < 1:
        raise UnsatisfiableConfig(
            f"need at least one buyer, item, and period; got {n}, {m}, {T}",
            field="n_buyers/n_items/periods",
        )
    if config.trend not in TRENDS:
        raise UnsatisfiableConfig(f"unknown trend {config.trend!r}", field="trend")
    if config.valuation_mode not in VALUATION_MODES:
        raise UnsatisfiableConfig(
            f"unknown valuation_mode {config.valuation_mode!r}", field="valuation_mode"
        )
    lo, hi = config.value_range
    if not (0 < lo <= hi):
        raise UnsatisfiableConfig("value_range must satisfy 0 < low <= high", field="value_range")
    exclusive = (
        config.include_exclusive_pair
        if config.include_exclusive_pair is not None
        else n >= 10
    )
    zero_demand = (
        config.include_zero_demand if config.include_zero_demand is not None else n >= 10
    )
    if exclusive and (n < 2 or m < 2):
        raise UnsatisfiableConfig(
            "exclusive pair needs at least two buyers and two items", field="include_exclusive_pair"
        )
    if zero_demand and config.budget_mode == "equal-to-demand":
        raise UnsatisfiableConfig(
            "equal-to-demand budgets are undefined for the zero-demand sentinel buyer",
            field="budget_mode",
        )
    rng = np.random.default_rng(config.seed)

    def draw_value() -> float:
        if config.valuation_mode == "binary":
            return 1.0
        if config.valuation_mode == "bivalued":
            return float(hi if rng.uniform() < 0.5 else lo)
        return float(rng.uniform(lo, hi))

    # demands: per-buyer base level times a per-buyer trend profile
    base = config.demand_level * rng.uniform(0.5, 1.5, size=n)
    demand = np.empty((n, T))
    for i in range(n):
        demand[i] = base[i] * _trend_profile(config.trend, T, rng)
    zero_idx = n - 2 if (zero_demand and n >= 2) else None
    if zero_demand and n < 2:
        raise UnsatisfiableConfig(
            "zero-demand sentinel needs at least two buyers", field="include_zero_demand"
        )
    if zero_idx is not None:
        demand[zero_idx] = 0.0

    # valuation graph: each buyer values ceil(density * m) items; every item
    # is valued by someone; the exclusive pair is carved out first
    pool = list(range(m - 1 if exclusive else m))
    if not pool:
        raise UnsatisfiableConfig("no items left outside the exclusive pair", field="n_items")
    k = max(1, math.ceil(config.density * len(pool)))
    k = min(k, len(pool))
    edges: dict[tuple[int, int], float] = {}
    general_buyers = [i for i in range(n) if not (exclusive and i == n - 1)]
    for i in general_buyers:
        for j in rng.choice(len(pool), size=k, replace=False):
            edges[(i, pool[j])] = draw_value()
    covered = {j for (_, j) in edges}
    for j in pool:
        if j not in covered:
            i = int(rng.choice(general_buyers))
            edges[(i, j)] = draw_value()
    if exclusive:
        edges[(n - 1, m - 1)] = draw_value()

    # supplies: per-period caps sized from the peak total demand, overall caps
    # from the cumulative demand, split across items by random weights
    weights = rng.uniform(0.5, 1.5, size=m)
    weights = weights / weights.sum()
    d_tot = demand.sum(axis=0)  # (T,)
    peak = max(float(d_tot.max()), 1.0)
    cumulative = max(float(d_tot.sum()), float(T))
    per_period = config.supply_factor * np.outer(weights, np.full(T, peak))  # (m, T)
    total = config.supply_factor * weights * cumulative  # (m,)
    if T == 1:
        total = per_period[:, 0].copy()

    budgets = rng.uniform(config.budget_range[0], config.budget_range[1], size=n)
    buyers = tuple(
        Buyer(id=f"b{i:02d}", budget=float(budgets[i]), demand=tuple(float(v) for v in demand[i]))
        for i in range(n)
    )
    items = tuple(
        Item(
            id=f"i{j:02d}",
            supply_per_period=tuple(float(v) for v in per_period[j]),
            supply_total=float(total[j]),
        )
        for j in range(m)
    )
    valuations = ValuationMatrix.from_dict(
        {(f"b{i:02d}", f"i{j:02d}"): v for (i, j), v in edges.items()}
    )
    return MarketInstance(
        buyers=buyers,
        items=items,
        valuations=valuations,
        periods=T,
        budget_mode=config.budget_mode,
    )


def exclusive_pair_market(
    n_buyers: int = 6,
    n_items: int = 5,
    periods: int = 1,
    *,
    demand: float = 0.2,
    include_zero_demand: bool = True,
    value: float = 1.0,
    supply: float = 1.0,
    budget_mode: str = "explicit",
) -> MarketInstance:
    """A hand-built market with one exclusive buyer-item pair.

    Buyers b00..b{n-2} form a complete block over items i00..i{m-2} (all at
    the same valuation); buyer b{n-1} values only item i{m-1}, which nobody
    else values, so its outcome is decoupled from the contested block.  When
    include_zero_demand is set, buyer b{n-2} has zero demand (drop it for
    budget mode equal-to-demand).
    """
    if n_buyers < 2 or n_items < 2:
        raise UnsatisfiableConfig("exclusive pair market needs >= 2 buyers and items")
    T = periods
    buyers = []
    for i in range(n_buyers):
        d = 0.0 if (include_zero_demand and i == n_buyers - 2) else demand
        buyers.append(Buyer(id=f"b{i:02d}", budget=1.0, demand=tuple([d] * T)))
    items = [
        Item(
            id=f"i{j:02d}",
            supply_per_period=tuple([supply] * T),
            supply_total=float(supply if T == 1 else supply * T),
        )
        for j in range(n_items)
    ]
    vals: dict[tuple[str, str], float] = {}
    for i in range(n_buyers - 1):
        for j in range(n_items - 1):
            vals[(f"b{i:02d}", f"i{j:02d}")] = value
    vals[(f"b{n_buyers - 1:02d}", f"i{n_items - 1:02d}")] = value
    return MarketInstance(
        buyers=tuple(buyers),
        items=tuple(items),
        valuations=ValuationMatrix.from_dict(vals),
        periods=T,
        budget_mode=budget_mode,
    )


# ---------------------------------------------------------------------------
# demand-shock robustness


@dataclass
class RealizationBatch:
    """Redrawn demands: (k, n_buyers, periods), with the draw parameters."""

    demands: np.ndarray
    sigma: float
    spike_prob: float
    seed: int

    @property
    def k(self) -> int:
        return self.demands.shape[0]


def draw_realizations(
    inst: MarketInstance,
    k: int,
    *,
    sigma: float = 0.2,
    spike_prob: float = 0.05,
    seed: int = 0,
) -> RealizationBatch:
    """Multiplicative lognormal demand noise with occasional doubling spikes.

    Each realization scales every (buyer, period) demand by an independent
    lognormal(0, sigma) factor; with probability spike_prob one uniformly
    chosen (buyer, period) demand is doubled on top.
    """
    a = arrays(inst)
    rng = np.random.default_rng(seed)
    factors = rng.lognormal(mean=0.0, sigma=sigma, size=(k, a.n, a.T))
    demands = a.demand[None, :, :] * factors
    spikes = rng.uniform(size=k) < spike_prob
    for r in np.flatnonzero(spikes):
        i = int(rng.integers(0, a.n))
        t = int(rng.integers(0, a.T))
        demands[r, i, t] *= 2.0
    return RealizationBatch(demands=demands, sigma=sigma, spike_prob=spike_prob, seed=seed)


@dataclass
class RobustnessSummary:
    """Shortfall/coverage of one frozen allocation across demand redraws."""

    buyers: list[str]
    shortfall: np.ndarray  # (k, n) unmet realized demand per realization/buyer
    coverage: np.ndarray  # (k, n) 1.0 where the realization left zero shortfall
    coverage_probability: float  # fraction of (realization, buyer) pairs covered
    mean_shortfall: np.ndarray  # (n,)
    p95_shortfall: np.ndarray  # (n,)
    mean_coverage: np.ndarray  # (n,) per-buyer fraction of covered realizations
    worst_coverage: np.ndarray  # (n,)
    idle_supply: float  # usable supply the allocation leaves unused

    def rows(self) -> list[tuple[int, str, float, float]]:
        """(realization, buyer, shortfall, coverage) rows in a fixed order."""
        out = []
        k, n = self.shortfall.shape
        for r in range(k):
            for i in range(n):
                out.append(
                    (r, self.buyers[i], float(self.shortfall[r, i]), float(self.coverage[r, i]))
                )
        return out


def evaluate_robustness(
    inst: MarketInstance, x: np.ndarray, batch: RealizationBatch
) -> RobustnessSummary:
    """Score a frozen allocation against redrawn demands.

    Delivered value per buyer is fixed by x; shortfall is the positive part
    of realized total demand minus delivered value, and a (realization,
    buyer) pair counts as covered exactly when its shortfall is zero.  The
    coverage probability is the fraction of covered pairs.
    """
    a = arrays(inst)
    delivered = np.einsum("ij,ijt->i", a.values, np.asarray(x))  # (n,)
    realized = batch.demands.sum(axis=2)  # (k, n)
    shortfall = np.maximum(0.0, realized - delivered[None, :])
    coverage = (shortfall <= 0.0).astype(float)
    allocated = np.asarray(x).sum(axis=(0, 2))  # (m,)
    idle = float(np.maximum(a.usable_supply - allocated, 0.0).sum())
    return RobustnessSummary(
        buyers=list(a.buyer_ids),
        shortfall=shortfall,
        coverage=coverage,
        coverage_probability=float(coverage.mean()),
        mean_shortfall=shortfall.mean(axis=0),
        p95_shortfall=np.quantile(shortfall, 0.95, axis=0),
        mean_coverage=coverage.mean(axis=0),
        worst_coverage=coverage.min(axis=0),
        idle_supply=idle,
    )


# ---------------------------------------------------------------------------
# gamma sweeps


@dataclass
class SweepRow:
    """One gamma point: unpenalized objective, variation, penalty, report."""

    gamma: float
    objective: float  # log-surplus part alone, without the -gamma * penalty term
    total_variation: float
    penalty_value: float
    converged: bool
    failed: bool = False
    error: str | None = None
    report: SolveReport | None = None

    def csv_values(self) -> tuple[float, float, float, float]:
        return (self.gamma, self.objective, self.total_variation, self.penalty_value)


def sweep_gamma(
    inst: MarketInstance,
    penalty: PenaltyKind | str,
    gammas,
    *,
    tol: float | None = None,
    seed: int = 0,
    variation_band: float | None = None,
) -> list[SweepRow]:
    """Solve the smoothness-penalized program along an increasing gamma path.

    Each row reports the unpenalized objective (the log-surplus part of the
    optimum, with the gamma * penalty term added back).  Points are solved
    independently (optionally in a thread pool sized by the FAIRWORK_THREADS
    environment variable; unset or 0 means serial) and a failed point is
    recorded and skipped rather than aborting the sweep.
    """
    penalty = PenaltyKind(penalty)
    gammas = [float(g) for g in gammas]
    kwargs: dict = {"seed": seed, "variation_band": variation_band}
    if tol is not None:
        kwargs["tol"] = tol

    def solve_one(g: float) -> SweepRow:
        try:
            rep = solve_program(
                inst, ProgramKind.EG_SMOOTH, gamma=g, penalty=penalty, **kwargs
            )
        except Exception as exc:  # noqa: BLE001 — a sweep survives bad points
            return SweepRow(
                gamma=g,
                objective=float("nan"),
                total_variation=float("nan"),
                penalty_value=float("nan"),
                converged=False,
                failed=True,
                error=f"{type(exc).__name__}: {exc}",
            )
        return SweepRow(
            gamma=g,
            objective=rep.objective_value + g * rep.penalty_value,
            total_variation=rep.total_variation,
            penalty_value=rep.penalty_value,
            converged=rep.converged,
            report=rep,
        )

    workers = _thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve_one, gammas))
    return [solve_one(g) for g in gammas]


def sweep_monotonicity_violations(rows: list[SweepRow], tol: float = 1e-6) -> list[str]:
    """Regularization-path defects along increasing gamma.

    On a sorted, successful sweep neither the penalty value nor the
    unpenalized objective may increase as gamma grows.  Returns
    human-readable violation descriptions.
    """
    ok = [r for r in rows if not r.failed]
    ok.sort(key=lambda r: r.gamma)
    out = []
    for prev, cur in zip(ok, ok[1:]):
        if cur.penalty_value > prev.penalty_value + tol:
            out.append(
                f"penalty value rose from {prev.penalty_value:.6g} (gamma {prev.gamma:g}) "
                f"to {cur.penalty_value:.6g} (gamma {cur.gamma:g})"
            )
        if cur.objective > prev.objective + tol:
            out.append(
                f"unpenalized objective rose from {prev.objective:.6g} (gamma {prev.gamma:g}) "
                f"to {cur.objective:.6g} (gamma {cur.gamma:g})"
            )
    return out
