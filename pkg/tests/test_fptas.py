import numpy as np
import pytest

from caldesign import lp_core
from caldesign.errors import ValidationError
from caldesign.fptas import (
    BiEventPlan,
    build_disc_lp,
    build_grid,
    discontinuities,
    fptas_solve,
    plan_to_predictor,
    round_plan,
)
from caldesign.model import ece, indirect_utility_matrix, payoff
from caldesign.exact import solve_exact

from conftest import make_instance, random_feasible_plan, random_instance


class TestDiscontinuities:
    def test_golden_breakpoints(self, golden):
        zs = discontinuities(golden)
        assert zs.size == 3
        # the capped "minus infinity" entry shifts the top crossing by ~1e-8
        assert np.allclose(zs, [1e-5, 0.9, 1.0], atol=1e-7)

    def test_single_action_has_none(self, two_event):
        assert discontinuities(two_event).size == 0

    def test_matches_dense_scan(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            inst = random_instance(rng, epsilon=0.1, m_min=2)
            zs = discontinuities(inst)
            ps = np.linspace(0.0, 1.0, 1_000_001)
            winners = np.argmax(inst.agent_scores(ps), axis=1)
            flips = ps[1:][winners[1:] != winners[:-1]]
            # every dense-scan flip sits next to a reported breakpoint
            for f in flips:
                assert np.min(np.abs(zs - f)) <= 2e-6
            assert zs.size >= np.unique(np.round(flips, 4)).size


class TestGrid:
    def test_hand_expanded_example(self):
        inst = make_instance([0.5], [1.0], [[0.0, 0.0]], [[[1.0, 1.0]]],
                             epsilon=1.0, norm=1.0)
        g = build_grid(inst, 0.25)
        want = [0.0, 0.01171875, 0.109375, 0.1875, 0.25, 0.5,
                0.75, 0.8125, 0.890625, 0.98828125, 1.0]
        assert np.allclose(g.points, want, atol=1e-12)
        assert g.levels == 13
        assert g.delta0 == pytest.approx(0.25)

    def test_points_clipped_to_unit_interval(self):
        rng = np.random.default_rng(18)
        for _ in range(20):
            inst = random_instance(rng, epsilon=float(rng.uniform(0, 1)))
            g = build_grid(inst, float(rng.uniform(0.02, 0.3)))
            assert g.points[0] >= 0.0 and g.points[-1] <= 1.0
            assert np.all(np.diff(g.points) > 0)
            for th in inst.theta:
                assert np.min(np.abs(g.points - th)) <= 1e-12

    def test_bad_delta(self, golden):
        for bad in (0.0, 0.34, -0.1, 1.0):
            with pytest.raises(ValidationError) as err:
                build_grid(golden, bad)
            assert err.value.code == "BAD_DELTA"

    def test_zero_budget_collapses_local_layer(self, golden):
        g = build_grid(golden.with_epsilon(0.0), 0.1)
        base = set(np.round(np.arange(0, 1.0001, 0.1), 12))
        base |= set(np.round(golden.theta, 12))
        base |= set(np.round(g.discontinuities, 12))
        assert set(np.round(g.points, 12)) == base

    def test_size_bound(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            inst = random_instance(rng, epsilon=float(rng.uniform(0.005, 1)))
            delta = float(rng.uniform(0.03, 0.3))
            g = build_grid(inst, delta)
            cap = 4 * (1 / delta + (inst.m + inst.n) * g.levels)
            assert g.size <= cap


class TestDiscLp:
    def test_always_feasible(self):
        rng = np.random.default_rng(20)
        for _ in range(10):
            inst = random_instance(rng, epsilon=float(rng.uniform(0, 0.3)))
            grid = build_grid(inst, 0.2)
            lp, cols = build_disc_lp(inst, grid)
            sol = lp_core.solve(lp)
            assert sol.status == lp_core.OPTIMAL
            plan = cols.plan(sol.x)
            assert np.allclose(plan.event_supply(inst), inst.lam, atol=1e-7)

    def test_large_budget_decouples_events(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            inst = random_instance(rng, epsilon=1.0)
            grid = build_grid(inst, 0.2)
            lp, _ = build_disc_lp(inst, grid)
            sol = lp_core.solve(lp)
            U = indirect_utility_matrix(inst, grid.points)
            want = float(inst.lam @ U.max(axis=1))
            assert sol.objective_value == pytest.approx(want, abs=1e-7)

    def test_single_event_columns(self):
        inst = make_instance([0.3], [1.0], [[0.0, 0.0], [-0.5, 0.5]],
                             np.ones((1, 2, 2)), 0.1)
        grid = build_grid(inst, 0.2)
        _, cols = build_disc_lp(inst, grid)
        assert np.all(cols.i == 0) and np.all(cols.j == 0)
        assert np.allclose(cols.q, 0.3)

    def test_reduced_matches_full_predictions(self):
        rng = np.random.default_rng(22)
        for _ in range(6):
            inst = random_instance(rng, epsilon=float(rng.uniform(0, 0.3)),
                                   n_max=3)
            grid = build_grid(inst, 0.25)
            lp_red, _ = build_disc_lp(inst, grid)
            lp_full, _ = build_disc_lp(inst, grid, full_predictions=True)
            v_red = lp_core.solve(lp_red).objective_value
            v_full = lp_core.solve(lp_full).objective_value
            assert v_red == pytest.approx(v_full, abs=1e-7)


class TestPlanToPredictor:
    def test_diagonal_plan_reveals(self, golden):
        n = golden.n
        plan = BiEventPlan(range(n), range(n), golden.theta, golden.theta,
                           golden.lam)
        pred = plan_to_predictor(plan, golden)
        assert ece(pred, golden, 1.0) <= 1e-12
        assert np.allclose(np.sort(pred.support), golden.theta)

    def test_equal_mean_pair_splits_half(self):
        inst = make_instance([0.5, 0.5], [0.5, 0.5], [[0.0, 0.0]],
                             np.zeros((2, 1, 2)), 0.5)
        plan = BiEventPlan([0, 1], [0, 1], [0.5, 0.5], [0.125, 0.875],
                           [0.5, 0.5])
        pred = plan_to_predictor(plan, inst)
        assert np.allclose(pred.support, [0.125, 0.875])
        assert pred.mass[0, 0] == pytest.approx(1.0)
        assert pred.mass[1, 1] == pytest.approx(1.0)

    def test_payoff_matches_plan_objective(self):
        rng = np.random.default_rng(24)
        for _ in range(40):
            inst = random_instance(rng, epsilon=0.5, n_min=2)
            plan = random_feasible_plan(rng, inst, anchors_only=False)
            pred = plan_to_predictor(plan, inst)
            assert payoff(pred, inst) == pytest.approx(plan.objective(inst),
                                                       abs=1e-9)

    def test_supply_violation(self, golden):
        plan = BiEventPlan([0], [0], [golden.theta[0]], [0.5], [1.0])
        with pytest.raises(ValidationError) as err:
            plan_to_predictor(plan, golden)
        assert err.value.code == "SUPPLY_VIOLATION"

    def test_error_bound(self):
        # predictor calibration error never exceeds the plan's raw error
        rng = np.random.default_rng(25)
        for t in (1.0, 2.0):
            for _ in range(40):
                inst = random_instance(rng, epsilon=0.5, n_min=2, norm=t)
                plan = random_feasible_plan(rng, inst, anchors_only=False)
                pred = plan_to_predictor(plan, inst)
                assert ece(pred, inst, t) ** t <= plan.raw_error(t) + 1e-7

    def test_record_round_trip(self):
        rng = np.random.default_rng(33)
        inst = random_instance(rng, epsilon=0.5, n_min=2)
        plan = random_feasible_plan(rng, inst)
        records = plan.to_records()
        assert all(set(r) == {"i", "j", "q", "p", "mass"} for r in records)
        again = BiEventPlan.from_records(records)
        assert np.allclose(again.event_supply(inst), plan.event_supply(inst))
        assert again.raw_error(1.0) == pytest.approx(plan.raw_error(1.0))

    def test_mass_conservation(self):
        rng = np.random.default_rng(26)
        for _ in range(20):
            inst = random_instance(rng, epsilon=0.5, n_min=2)
            plan = random_feasible_plan(rng, inst)
            assert plan.event_supply(inst).sum() == pytest.approx(1.0,
                                                                  abs=1e-12)


class TestRoundPlan:
    def test_calibrated_diagonal_stays_calibrated(self, golden):
        inst = golden.with_epsilon(0.1)
        grid = build_grid(inst, 0.1)
        n = inst.n
        plan = BiEventPlan(range(n), range(n), inst.theta, inst.theta,
                           inst.lam)
        rounded = round_plan(plan, inst, grid)
        assert rounded.raw_error(1.0) <= 1e-15
        assert np.allclose(rounded.event_supply(inst), inst.lam, atol=1e-12)

    def test_small_gap_case_traced_by_hand(self):
        # two events at 0.2 / 0.8; miscalibrate the pooled outcome q = 0.41
        # to the prediction p = 0.4 (an action breakpoint). With eps = 0.04,
        # delta = 0.1: delta0 = 4e-3, the gap 0.01 is below delta0, so the
        # remaining 1/(1+2 delta) fraction spreads q onto p (weight
        # (q_R - q)/(q_R - q_L) with q_R = p + delta0 = 0.404... wait gap
        # 0.01 > delta0 = 0.004) -- exercised with eps = 0.2 instead:
        # delta0 = 0.02 > 0.01, q_L = max(0.2, 0.4) = 0.4,
        # q_R = min(0.42, 0.8) = 0.42, weights 1/2 each.
        inst = make_instance(
            [0.2, 0.8], [0.5, 0.5], [[0.0, 0.0], [-0.4, 0.6]],
            np.ones((2, 2, 2)), epsilon=0.2, norm=1.0)
        grid = build_grid(inst, 0.1)
        # r = (0.8 - 0.41) / 0.6 = 0.65, so the pooled entry consumes 0.065
        # of event 0 and 0.035 of event 1
        plan = BiEventPlan([0, 0, 1], [1, 0, 1], [0.41, 0.2, 0.8],
                           [0.4, 0.2, 0.8], [0.1, 0.435, 0.465])
        assert np.allclose(plan.event_supply(inst), inst.lam, atol=1e-12)
        rounded = round_plan(plan, inst, grid)
        keep = 1 / 1.2
        moved = {}
        for i, j, q, p, w in zip(rounded.i, rounded.j, rounded.q, rounded.p,
                                 rounded.w):
            moved[(i, j, round(q, 12), round(p, 12))] = w
        assert moved[(0, 1, 0.4, 0.4)] == pytest.approx(keep * 0.1 * 0.5)
        assert moved[(0, 1, 0.42, 0.4)] == pytest.approx(keep * 0.1 * 0.5)
        assert rounded.raw_error(1.0) <= plan.raw_error(1.0) + 1e-15

    def test_requires_anchor_predictions(self, golden):
        inst = golden.with_epsilon(0.1)
        grid = build_grid(inst, 0.1)
        plan = BiEventPlan([0, 1, 2], [0, 1, 2], inst.theta,
                           [0.5, 0.9, 1.0], [0.25, 0.5, 0.25])
        with pytest.raises(ValidationError) as err:
            round_plan(plan, inst, grid)
        assert err.value.code == "PRECONDITION_VIOLATION"

    def test_guarantees_on_random_plans(self):
        rng = np.random.default_rng(27)
        for trial in range(60):
            delta = (0.05, 0.1)[trial % 2]
            inst = random_instance(rng, epsilon=0.0, n_min=2)
            plan = random_feasible_plan(rng, inst)
            raw = plan.raw_error(1.0)
            inst = inst.with_epsilon(raw if raw > 0 else 0.05)
            grid = build_grid(inst, delta)
            rounded = round_plan(plan, inst, grid)
            for q in rounded.q:
                assert np.min(np.abs(grid.points - q)) <= 1e-12
            assert rounded.raw_error(1.0) <= plan.raw_error(1.0) + 1e-12
            assert rounded.objective(inst) >= \
                (1 - 3 * delta) * plan.objective(inst) - 1e-9
            assert np.allclose(rounded.event_supply(inst), inst.lam,
                               atol=1e-7)

    def test_budget_preserved_for_quadratic_norm(self):
        rng = np.random.default_rng(28)
        for _ in range(30):
            inst = random_instance(rng, epsilon=0.0, n_min=2, norm=2.0)
            plan = random_feasible_plan(rng, inst)
            raw = plan.raw_error(2.0)
            inst = inst.with_epsilon(max(raw ** 0.5, 0.05))
            grid = build_grid(inst, 0.1)
            rounded = round_plan(plan, inst, grid)
            assert rounded.raw_error(2.0) <= inst.epsilon ** 2 + 1e-9


class TestFptasSolve:
    def test_golden_guarantee(self, golden):
        pred, obj = fptas_solve(golden, 0.1)
        assert obj >= 0.9 * 2.15 - 1e-9
        assert ece(pred, golden, 1.0) <= golden.epsilon + 1e-7
        assert payoff(pred, golden) == pytest.approx(obj, abs=1e-6)

    def test_zero_budget_stays_calibrated(self):
        rng = np.random.default_rng(29)
        for _ in range(5):
            inst = random_instance(rng, epsilon=0.0, n_min=2)
            pred, obj = fptas_solve(inst, 0.3)
            assert ece(pred, inst, 1.0) <= 1e-7
            _, _, exact_obj = solve_exact(inst, tie_break=None)
            assert obj <= exact_obj + 1e-7

    def test_quadratic_norm_against_fine_reference(self):
        rng = np.random.default_rng(30)
        inst = random_instance(rng, epsilon=0.15, n_max=2, n_min=2,
                               m_max=2, m_min=2, norm=2.0)
        coarse_pred, coarse = fptas_solve(inst, 0.4)
        _, fine = fptas_solve(inst, 0.04)
        assert ece(coarse_pred, inst, 2.0) <= inst.epsilon + 1e-7
        assert coarse >= (1 - 0.4) * fine - 1e-9

    def test_approximation_vs_exact(self):
        rng = np.random.default_rng(31)
        for trial in range(10):
            eps = (0.01, 0.1)[trial % 2]
            inst = random_instance(rng, epsilon=eps)
            _, _, opt = solve_exact(inst, tie_break=None)
            pred, obj = fptas_solve(inst, 0.1)
            assert obj >= (1 - 0.1) * opt - 1e-9
            assert obj <= opt + 1e-6
            assert ece(pred, inst, 1.0) <= eps + 1e-7
