"""Optimization engine: objective oracles, conic solves, max-min LPs."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    bivalued_pair_instance,
    chain_instance,
    interior_points,
    make_instance,
    random_instance,
    rotation_instance,
)
from _oracles import chain_leximin_share_oracle
from fairwork import (
    DomainGuardViolated,
    ProgramKind,
    check_assumption_pos,
    resolve_budgets,
    surplus_per_period,
)
from fairwork import engine
from fairwork.engine import central_difference_gradient, maximize, maxmin_linear, probe_component_max
from fairwork.programs import build_objective

GRAD_RTOL = 1e-5


def relative_gap(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def spec_for(inst, kind, **kw):
    return build_objective(resolve_budgets(inst), kind, **kw)


class TestGradientOracle:
    @pytest.mark.parametrize(
        "kind,periods",
        [
            (ProgramKind.EG, 1),
            (ProgramKind.EG_DEMAND, 1),
            (ProgramKind.EG_TIME_SUM, 3),
            (ProgramKind.EG_TIME_GEO_MEAN, 3),
        ],
    )
    def test_analytic_matches_central_differences(self, kind, periods):
        demand = 0.0 if kind is ProgramKind.EG else 0.15
        inst = random_instance(
            11, periods=periods, max_buyers=4, max_items=4, demand_level=demand
        )
        spec = spec_for(inst, kind)
        for x in interior_points(inst, spec.domain_margin, 5, seed=3):
            assert relative_gap(spec.grad(x), central_difference_gradient(spec, x)) < GRAD_RTOL

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # probes at the domain edge
    @pytest.mark.parametrize("penalty", ["absdev", "kl"])
    def test_penalized_gradient(self, penalty):
        inst = random_instance(23, periods=3, max_buyers=3, max_items=3, demand_level=0.1)
        spec = spec_for(inst, ProgramKind.EG_SMOOTH, gamma=0.05, penalty=penalty)
        points = interior_points(inst, spec.domain_margin, 8, seed=5)
        checked = 0
        for x in points:
            d = np.abs(np.diff(x, axis=2))
            if penalty == "absdev" and ((d > 0) & (d < 1e-4)).any():
                continue  # keep finite differences away from the kink
            # central differences need room on both sides, so compare away
            # from the x = 0 boundary where only one-sided derivatives exist
            mask = x > 1e-4
            assert mask.sum() >= 4
            analytic = spec.grad(x)[mask]
            numeric = central_difference_gradient(spec, x)[mask]
            gap = np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)))
            assert gap < GRAD_RTOL
            checked += 1
        assert checked >= 3

    def test_value_is_minus_infinity_outside_domain(self, bivalued_pair):
        spec = spec_for(bivalued_pair, ProgramKind.EG)
        assert spec.value(np.zeros((2, 2, 1))) == -np.inf

    def test_gradient_refuses_nonpositive_arguments(self, chain_market):
        spec = spec_for(chain_market("unit"), ProgramKind.EG_DEMAND)
        with pytest.raises(DomainGuardViolated):
            spec.grad_log_part(np.zeros((2, 2, 1)))

    @given(st.integers(min_value=0, max_value=5_000))
    @settings(max_examples=10, deadline=None)
    def test_gradient_invariant_on_random_instances(self, seed):
        inst = random_instance(seed, max_buyers=4, max_items=4, demand_level=0.1)
        spec = spec_for(inst, ProgramKind.EG_DEMAND)
        for x in interior_points(inst, spec.domain_margin, 2, seed=seed + 1):
            assert relative_gap(spec.grad(x), central_difference_gradient(spec, x)) < GRAD_RTOL


class TestPenaltyOracles:
    def test_total_variation_and_absdev_agree(self, rotation_market):
        spec = spec_for(rotation_market, ProgramKind.EG_SMOOTH, gamma=0.1, penalty="absdev")
        rng = np.random.default_rng(0)
        x = rng.uniform(0.0, 0.5, size=(2, 2, 3))
        assert spec.penalty_value(x) == pytest.approx(spec.total_variation(x))
        assert spec.total_variation(x) == pytest.approx(np.abs(np.diff(x, axis=2)).sum())

    def test_kl_penalty_is_symmetric_max_and_zero_on_constant_paths(self, rotation_market):
        spec = spec_for(rotation_market, ProgramKind.EG_SMOOTH, gamma=0.1, penalty="kl")
        constant = np.full((2, 2, 3), 0.4)
        assert spec.penalty_value(constant) == 0.0
        x = np.full((2, 2, 3), 0.4)
        x[0, 0, 1] = 0.9
        assert spec.penalty_value(x) > 0.0
        # reversing time leaves the max-of-both-directions penalty unchanged
        assert spec.penalty_value(x[:, :, ::-1]) == pytest.approx(spec.penalty_value(x))

    def test_single_period_penalty_is_zero(self, bivalued_pair):
        spec = spec_for(bivalued_pair, ProgramKind.EG)
        assert spec.total_variation(np.ones((2, 2, 1))) == 0.0
        assert spec.penalty_value(np.ones((2, 2, 1))) == 0.0


class TestMaximize:
    def test_symmetric_pair_splits_item_and_prices_at_two(self):
        inst = make_instance(
            buyers=[("b1", 1.0, 0.0), ("b2", 1.0, 0.0)],
            items=[("i1", 1.0, 1.0)],
            edges={("b1", "i1"): 1.0, ("b2", "i1"): 1.0},
        )
        res = maximize(spec_for(inst, ProgramKind.EG), resolve_budgets(inst))
        assert res.converged
        np.testing.assert_allclose(res.x[:, 0, 0], [0.5, 0.5], atol=1e-7)
        assert res.lambda_period[0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_lone_buyer_price_equals_budget(self):
        inst = make_instance(
            buyers=[("b1", 1.0, 0.0)],
            items=[("i1", 1.0, 1.0)],
            edges={("b1", "i1"): 1.0},
        )
        res = maximize(spec_for(inst, ProgramKind.EG), resolve_budgets(inst))
        assert res.x[0, 0, 0] == pytest.approx(1.0, abs=1e-7)
        assert res.lambda_period[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_demand_inflates_the_lone_buyer_price(self):
        inst = make_instance(
            buyers=[("b1", 1.0, 0.5)],
            items=[("i1", 1.0, 1.0)],
            edges={("b1", "i1"): 1.0},
        )
        res = maximize(spec_for(inst, ProgramKind.EG_DEMAND), resolve_budgets(inst))
        surplus = surplus_per_period(inst, res.x).sum()
        assert surplus == pytest.approx(0.5, abs=1e-7)
        assert res.lambda_period[0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_two_period_geo_mean_micro_instance(self):
        inst = make_instance(
            buyers=[("b1", 1.0, (0.0, 0.5))],
            items=[("i1", (1.0, 1.0), 2.0)],
            edges={("b1", "i1"): 1.0},
            periods=2,
        )
        res = maximize(spec_for(inst, ProgramKind.EG_TIME_GEO_MEAN), resolve_budgets(inst))
        np.testing.assert_allclose(res.x[0, 0], [1.0, 1.0], atol=1e-6)
        np.testing.assert_allclose(surplus_per_period(inst, res.x)[0], [1.0, 0.5], atol=1e-6)

    def test_optimum_dominates_random_feasible_points(self, bivalued_pair):
        inst = resolve_budgets(bivalued_pair)
        spec = spec_for(inst, ProgramKind.EG)
        res = maximize(spec, inst)
        check = check_assumption_pos(inst)
        rng = np.random.default_rng(7)
        for _ in range(100):
            x = check.witness * rng.uniform(0.0, 1.0, size=check.witness.shape)
            assert spec.value(res.x) >= spec.value(x) - 1e-9

    @given(st.integers(min_value=0, max_value=5_000))
    @settings(max_examples=8, deadline=None)
    def test_dominance_on_random_instances(self, seed):
        inst = random_instance(seed, max_buyers=4, max_items=4, demand_level=0.1)
        spec = spec_for(inst, ProgramKind.EG_DEMAND)
        res = maximize(spec, resolve_budgets(inst))
        check = check_assumption_pos(inst)
        rng = np.random.default_rng(seed)
        for _ in range(25):
            x = check.witness * rng.uniform(0.0, 1.0, size=check.witness.shape)
            assert spec.value(res.x) >= spec.value(x) - 1e-8

    def test_duals_nonnegative_and_zero_on_slack_supply(self):
        inst = random_instance(41, periods=3, max_buyers=4, max_items=4, demand_level=0.1)
        inst = resolve_budgets(inst)
        res = maximize(spec_for(inst, ProgramKind.EG_TIME_SUM), inst)
        assert res.converged
        assert (res.lambda_period >= -1e-8).all()
        assert (res.lambda_total >= -1e-8).all()
        load = res.x.sum(axis=0)  # (m, T)
        per = np.array([[i.supply_per_period[t] for t in range(inst.periods)] for i in inst.items])
        tot = np.array([i.supply_total for i in inst.items])
        slack_period = per - load
        slack_total = tot - load.sum(axis=1)
        assert (res.lambda_period[slack_period > 1e-5] <= 1e-6).all()
        assert (res.lambda_total[slack_total > 1e-5] <= 1e-6).all()

    def test_result_is_seed_insensitive(self, bivalued_pair):
        inst = resolve_budgets(bivalued_pair)
        spec = spec_for(inst, ProgramKind.EG)
        a = maximize(spec, inst, seed=0)
        b = maximize(spec, inst, seed=12345)
        u_a = surplus_per_period(inst, a.x).sum(axis=1)
        u_b = surplus_per_period(inst, b.x).sum(axis=1)
        np.testing.assert_allclose(u_a, u_b, atol=10 * engine.KKT_TOL)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # backends log(0) en route
    def test_zero_margin_instance_raises_domain_guard(self):
        inst = make_instance(
            buyers=[("b1", 1.0, 1.0)],
            items=[("i1", 1.0, 1.0)],
            edges={("b1", "i1"): 1.0},
        )
        with pytest.raises(DomainGuardViolated):
            maximize(spec_for(inst, ProgramKind.EG_DEMAND), resolve_budgets(inst))

    def test_variation_band_pins_consecutive_periods(self):
        inst = make_instance(
            buyers=[("b1", 1.0, (0.0, 0.0)), ("b2", 1.0, (0.0, 0.0))],
            items=[("i1", (1.0, 0.4), 2.0)],
            edges={("b1", "i1"): 1.0, ("b2", "i1"): 1.0},
            periods=2,
        )
        inst = resolve_budgets(inst)
        res = maximize(spec_for(inst, ProgramKind.EG_TIME_SUM), inst, variation_band=1.0)
        np.testing.assert_allclose(res.x[:, :, 0], res.x[:, :, 1], atol=1e-6)


class TestMaxMinLinear:
    def test_equal_budget_pair_reaches_four_thirds(self):
        inst = resolve_budgets(bivalued_pair_instance("unit"))
        res = maxmin_linear(inst)
        assert sorted(res.values.values()) == pytest.approx([4 / 3, 4 / 3], abs=1e-7)
        assert res.t_star == pytest.approx(np.log(4 / 3), abs=1e-7)
        assert set(res.tight_set) == {0, 1}

    def test_unequal_budget_bisection_matches_root_oracle(self):
        inst = resolve_budgets(chain_instance("equal-to-demand"))
        res = maxmin_linear(inst)
        a_star = chain_leximin_share_oracle()
        assert res.x[0, 0, 0] == pytest.approx(a_star, abs=1e-6)
        assert res.values[0] == pytest.approx(a_star - 0.1, abs=1e-6)
        assert res.values[1] == pytest.approx(1.8 - a_star, abs=1e-6)

    def test_plain_scale_reports_negative_margin_for_stranded_buyer(self):
        inst = make_instance(
            buyers=[("b1", 1.0, 0.3), ("b2", 1.0, 0.0)],
            items=[("i1", 1.0, 1.0)],
            edges={("b2", "i1"): 1.0},
        )
        res = maxmin_linear(resolve_budgets(inst), log_scale=False)
        assert res.t_star == pytest.approx(-0.3, abs=1e-9)
        assert 0 in res.tight_set

    def test_per_period_components_on_rotation(self, rotation_market):
        inst = resolve_budgets(rotation_market)
        res = maxmin_linear(inst, per_period=True, log_scale=False)
        assert res.t_star == pytest.approx(1.0, abs=1e-7)
        assert len(res.values) == 6

    def test_floors_bind_other_components(self):
        inst = resolve_budgets(bivalued_pair_instance("unit"))
        res = maxmin_linear(inst, free=[1], floors={0: 4 / 3})
        assert res.values[1] == pytest.approx(4 / 3, abs=1e-7)
        assert surplus_per_period(inst, res.x).sum(axis=1)[0] >= 4 / 3 - 1e-7

    def test_free_subset_restricts_the_min(self):
        inst = resolve_budgets(bivalued_pair_instance("unit"))
        res = maxmin_linear(inst, free=[0], floors={1: 0.0})
        # with b2 only floored at 0, b1 can take both items fully
        assert res.values[0] == pytest.approx(3.0, abs=1e-6)


class TestProbeComponentMax:
    def test_probe_respects_floors(self):
        inst = resolve_budgets(bivalued_pair_instance("unit"))
        ceiling, x = probe_component_max(inst, 1, {0: 4 / 3})
        assert ceiling == pytest.approx(4 / 3, abs=1e-7)
        assert surplus_per_period(inst, x).sum(axis=1)[0] >= 4 / 3 - 1e-7

    def test_probe_unconstrained_gives_component_everything(self):
        inst = resolve_budgets(bivalued_pair_instance("unit"))
        ceiling, _ = probe_component_max(inst, 0, {1: 0.0})
        assert ceiling == pytest.approx(3.0, abs=1e-7)
