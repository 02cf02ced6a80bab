import math

import numpy as np
import pytest

from caldesign import lp_core
from caldesign.errors import SolverError, ValidationError
from caldesign.lp_core import LinearProgram, format_lp, solve


def random_lp(rng, n_vars=6, n_rows=4, feasible=True):
    """Random bounded-feasible LP: constraints a @ x <= a @ x0 + slack."""
    A = rng.normal(size=(n_rows, n_vars))
    x0 = rng.uniform(0.0, 1.0, n_vars)
    b = A @ x0 + rng.uniform(0.1, 1.0, n_rows)
    cons = [(A[r], "<=", b[r]) for r in range(n_rows)]
    # box the variables so the problem is bounded
    for j in range(n_vars):
        row = np.zeros(n_vars)
        row[j] = 1.0
        cons.append((row, "<=", 5.0))
    c = rng.normal(size=n_vars)
    return LinearProgram(n_vars, c, cons), x0


class TestBasics:
    def test_simple_bound(self):
        sol = solve(LinearProgram(1, [1.0], [([1.0], "<=", 1.0)]))
        assert sol.status == lp_core.OPTIMAL
        assert sol.objective_value == pytest.approx(1.0)

    def test_infeasible(self):
        sol = solve(LinearProgram(1, [1.0], [([1.0], "<=", -1.0)]))
        assert sol.status == lp_core.INFEASIBLE

    def test_two_var_vertex(self):
        lp = LinearProgram(2, [1.0, 1.0], [([1.0, 1.0], "<=", 2.0),
                                           ([1.0, 0.0], "<=", 1.0)])
        sol = solve(lp)
        assert sol.status == lp_core.OPTIMAL
        assert sol.objective_value == pytest.approx(2.0)

    def test_unbounded(self):
        assert solve(LinearProgram(1, [1.0], [])).status == lp_core.UNBOUNDED

    def test_equality_and_free_variable(self):
        lp = LinearProgram(2, [1.0, 2.0], [([1.0, 1.0], "==", 3.0)],
                           bounds=[(0, 5), (-1, 1)])
        sol = solve(lp)
        assert sol.objective_value == pytest.approx(4.0)
        assert np.allclose(sol.x, [2.0, 1.0])

    def test_free_variable_unbounded(self):
        lp = LinearProgram(2, [1.0, -2.0], [([1.0, 1.0], "==", 3.0)],
                           bounds=[(0, math.inf), (-math.inf, math.inf)])
        assert solve(lp).status == lp_core.UNBOUNDED

    def test_mirrored_upper_bound_only(self):
        # maximize -x with x <= 4 and no lower bound: optimum at -inf? no,
        # objective -x grows as x decreases without bound
        lp = LinearProgram(1, [-1.0], [], bounds=[(-math.inf, 4.0)])
        assert solve(lp).status == lp_core.UNBOUNDED
        lp = LinearProgram(1, [1.0], [], bounds=[(-math.inf, 4.0)])
        sol = solve(lp)
        assert sol.objective_value == pytest.approx(4.0)

    def test_shifted_lower_bound(self):
        lp = LinearProgram(1, [-1.0], [([1.0], "<=", 9.0)], bounds=[(2.0, 9.0)])
        sol = solve(lp)
        assert sol.objective_value == pytest.approx(-2.0)
        assert sol.x[0] == pytest.approx(2.0)

    def test_crossed_bounds_infeasible(self):
        lp = LinearProgram(1, [1.0], [], bounds=[(3.0, 1.0)])
        assert solve(lp).status == lp_core.INFEASIBLE

    def test_iteration_cap_raises(self):
        lp = LinearProgram(1, [1.0], [([1.0], "<=", 1.0)])
        with pytest.raises(SolverError) as err:
            solve(lp, max_iter=0)
        assert err.value.code == "NUMERICAL_FAILURE"

    def test_rejects_malformed(self):
        with pytest.raises(ValidationError):
            LinearProgram(2, [1.0], [])
        with pytest.raises(ValidationError):
            LinearProgram(1, [1.0], [([1.0], "<=", math.inf)])
        with pytest.raises(ValidationError):
            LinearProgram(1, [1.0], [([1.0], "!", 1.0)])


class TestProperties:
    def test_weak_duality_against_sampler(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            lp, x0 = random_lp(rng)
            sol = solve(lp)
            assert sol.status == lp_core.OPTIMAL
            # rejection-sample feasible points; none may beat the optimum
            best = lp.objective @ x0
            for _ in range(200):
                x = rng.uniform(0.0, 5.0, lp.num_vars)
                if all({"<=": a @ x <= r + 1e-12,
                        ">=": a @ x >= r - 1e-12,
                        "==": abs(a @ x - r) <= 1e-12}[op]
                       for a, op, r in lp.constraints):
                    best = max(best, lp.objective @ x)
            assert sol.objective_value >= best - 1e-7

    def test_variable_permutation_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            lp, _ = random_lp(rng)
            perm = rng.permutation(lp.num_vars)
            permuted = LinearProgram(
                lp.num_vars, lp.objective[perm],
                [(a[perm], op, r) for a, op, r in lp.constraints],
                bounds=[lp.bounds[j] for j in perm])
            v1 = solve(lp).objective_value
            v2 = solve(permuted).objective_value
            assert v1 == pytest.approx(v2, abs=1e-7)

    def test_matches_scipy_linprog(self):
        scipy_opt = pytest.importorskip("scipy.optimize")
        rng = np.random.default_rng(4)
        for trial in range(40):
            n_vars = int(rng.integers(2, 7))
            n_rows = int(rng.integers(1, 6))
            lp, _ = random_lp(rng, n_vars, n_rows, feasible=trial % 3 != 0)
            if trial % 3 == 0:
                # sprinkle equalities / reversed rows to vary structure
                a = rng.normal(size=n_vars)
                lp.add_constraint(a, ">=", float(a @ rng.uniform(0, 1, n_vars)) - 0.5)
            A_ub, b_ub, A_eq, b_eq = [], [], [], []
            for a, op, r in lp.constraints:
                if op == "<=":
                    A_ub.append(a)
                    b_ub.append(r)
                elif op == ">=":
                    A_ub.append(-a)
                    b_ub.append(-r)
                else:
                    A_eq.append(a)
                    b_eq.append(r)
            ref = scipy_opt.linprog(
                -lp.objective, A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                A_eq=np.array(A_eq) if A_eq else None,
                b_eq=np.array(b_eq) if b_eq else None,
                bounds=lp.bounds, method="highs")
            sol = solve(lp)
            if ref.status == 0:
                assert sol.status == lp_core.OPTIMAL
                assert sol.objective_value == pytest.approx(-ref.fun, abs=1e-6)
            elif ref.status == 2:
                assert sol.status == lp_core.INFEASIBLE
            elif ref.status == 3:
                assert sol.status == lp_core.UNBOUNDED


class TestKernels:
    def test_numpy_and_numba_agree(self):
        pytest.importorskip("numba")
        rng = np.random.default_rng(6)
        try:
            for _ in range(15):
                lp, _ = random_lp(rng)
                lp_core.set_kernel("numba")
                a = solve(lp)
                lp_core.set_kernel("numpy")
                b = solve(lp)
                assert a.status == b.status
                assert a.objective_value == pytest.approx(b.objective_value,
                                                          abs=1e-9)
                assert np.allclose(a.x, b.x, atol=1e-9)
        finally:
            lp_core.set_kernel(None)

    def test_env_flag_selects_numpy(self, monkeypatch):
        monkeypatch.setenv("CALDESIGN_DISABLE_NUMBA", "1")
        assert lp_core.active_kernel()[0] == "numpy"
        monkeypatch.delenv("CALDESIGN_DISABLE_NUMBA")


class TestDump:
    def test_format_smoke(self):
        lp = LinearProgram(2, [1.5, 0.0],
                           [([1.0, -2.0], "<=", 4.0), ([0.0, 1.0], ">=", 0.5)],
                           bounds=[(0, math.inf), (0, 3.0)])
        text = format_lp(lp, name="smoke")
        assert "Maximize" in text
        assert "c1: +1 x1 -2 x2 <= 4" in text
        assert "0 <= x2 <= 3" in text
        assert text.endswith("End\n")
