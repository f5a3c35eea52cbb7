import itertools

import numpy as np
import pytest

from hdgee.errors import DataError
from hdgee.simplex import LpStandardProblem, solve_lp


def vertex_enumeration(problem):
    """Exhaustive oracle: check every basic point of {Ax<=b (normalized), x>=0}.

    Returns (best_objective, best_x) or (None, None) when infeasible.
    Only valid for bounded problems (all our oracle instances have c >= 0
    or explicit upper bounds).
    """
    A = problem.A.copy()
    b = problem.b.copy()
    for i, s in enumerate(problem.sense):
        if s == ">=":
            A[i] = -A[i]
            b[i] = -b[i]
    n = A.shape[1]
    rows = np.vstack([A, -np.eye(n)])
    rhs = np.concatenate([b, np.zeros(n)])
    best, best_x = None, None
    for subset in itertools.combinations(range(len(rows)), n):
        M = rows[list(subset)]
        r = rhs[list(subset)]
        try:
            x = np.linalg.solve(M, r)
        except np.linalg.LinAlgError:
            continue
        if np.all(rows @ x <= rhs + 1e-9):
            val = float(problem.c @ x)
            if best is None or val < best - 1e-12:
                best, best_x = val, x
    return best, best_x


class TestTextbookInstances:
    def test_cover_constraint(self):
        prob = LpStandardProblem(
            c=np.array([1.0, 1.0]),
            A=np.array([[1.0, 1.0]]),
            b=np.array([1.0]),
            sense=(">=",),
        )
        sol = solve_lp(prob)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=1e-9)

    def test_single_upper_bound(self):
        prob = LpStandardProblem(
            c=np.array([-1.0]),
            A=np.array([[1.0]]),
            b=np.array([5.0]),
            sense=("<=",),
        )
        sol = solve_lp(prob)
        assert sol.status == "optimal"
        assert sol.x[0] == pytest.approx(5.0, abs=1e-9)

    def test_infeasible(self):
        prob = LpStandardProblem(
            c=np.array([1.0]),
            A=np.array([[1.0], [1.0]]),
            b=np.array([1.0, 3.0]),
            sense=("<=", ">="),
        )
        assert solve_lp(prob).status == "infeasible"

    def test_unbounded(self):
        prob = LpStandardProblem(
            c=np.array([-1.0, 0.0]),
            A=np.array([[0.0, 1.0]]),
            b=np.array([1.0]),
            sense=("<=",),
        )
        assert solve_lp(prob).status == "unbounded"

    def test_degenerate_two_phase(self):
        # equality-like pairing forces phase 1 plus degenerate pivots
        prob = LpStandardProblem(
            c=np.array([2.0, 3.0, 0.0]),
            A=np.array(
                [
                    [1.0, 1.0, 1.0],
                    [1.0, 1.0, 1.0],
                    [1.0, 0.0, 0.0],
                ]
            ),
            b=np.array([2.0, 2.0, 1.0]),
            sense=(">=", "<=", "<="),
        )
        sol = solve_lp(prob)
        assert sol.status == "optimal"
        # the zero-cost third variable absorbs the equality: x = (0, 0, 2)
        assert sol.objective == pytest.approx(0.0, abs=1e-9)
        assert sol.x[2] == pytest.approx(2.0, abs=1e-9)

    def test_dimension_validation(self):
        with pytest.raises(DataError):
            LpStandardProblem(
                c=np.ones(2), A=np.ones((2, 3)), b=np.ones(2), sense=("<=", "<=")
            )


class TestRandomInstancesAgainstOracle:
    def test_three_vars_four_constraints(self):
        rng = np.random.default_rng(7)
        solved = 0
        for _ in range(60):
            prob = LpStandardProblem(
                c=rng.uniform(0.0, 2.0, size=3),
                A=rng.normal(size=(4, 3)),
                b=rng.normal(size=4),
                sense=tuple(rng.choice(["<=", ">="], size=4)),
            )
            ref_obj, _ = vertex_enumeration(prob)
            sol = solve_lp(prob)
            if ref_obj is None:
                assert sol.status == "infeasible"
            else:
                assert sol.status == "optimal"
                assert sol.objective == pytest.approx(ref_obj, abs=1e-8)
                # returned point is feasible to 1e-9
                A, b = prob.A, prob.b
                for i, s in enumerate(prob.sense):
                    lhs = float(A[i] @ sol.x)
                    if s == "<=":
                        assert lhs <= b[i] + 1e-9
                    else:
                        assert lhs >= b[i] - 1e-9
                assert np.all(sol.x >= -1e-9)
                solved += 1
        assert solved > 20  # sanity: the generator produces feasible cases

    def test_deterministic_resolve(self):
        rng = np.random.default_rng(3)
        prob = LpStandardProblem(
            c=rng.uniform(0.5, 1.5, size=4),
            A=rng.normal(size=(5, 4)),
            b=rng.normal(size=5) + 1.0,
            sense=("<=",) * 5,
        )
        s1 = solve_lp(prob)
        s2 = solve_lp(prob)
        np.testing.assert_array_equal(s1.x, s2.x)
        assert s1.n_iterations == s2.n_iterations
