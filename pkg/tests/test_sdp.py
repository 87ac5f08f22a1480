import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privsme import ipm, sdp
from privsme.sdp import MATRIX, SCALAR, SYMMETRIC, ConicProblem, Tolerances, Variable, bmat

BACKENDS = ["native", "cvxopt"]


def schur_problem(a):
    prob = ConicProblem([Variable("u", SCALAR)])
    u = prob.var("u")
    prob.set_constraint(bmat([[-u, a * np.eye(1)], [a * np.eye(1), -np.eye(1)]], [1, 1], [1, 1]))
    prob.set_objective(u)
    return prob


def random_lmi(seed, m=4, n=3):
    """min c'x s.t. -I + sum x_i F_i <= 0, x >= 0, with F_i > 0 so x stays bounded."""
    rng = np.random.default_rng(seed)
    F = []
    for _ in range(n):
        A = rng.standard_normal((m, m))
        S = 0.5 * (A + A.T)
        F.append(S + (abs(np.linalg.eigvalsh(S)[0]) + 0.5) * np.eye(m))
    c = rng.uniform(-1.0, 1.0, n)
    prob = ConicProblem([Variable(f"x{i}", SCALAR, lower=0.0) for i in range(n)])
    expr = prob.constant(-np.eye(m))
    obj = None
    for i in range(n):
        xi = prob.var(f"x{i}")
        expr = expr + _scale(xi, F[i])
        term = xi * float(c[i])
        obj = term if obj is None else obj + term
    prob.set_constraint(expr)
    prob.set_objective(obj)
    return prob, F, c


def _scale(x1, M):
    return sdp.AffineMatrix(x1.coef[:, 0, 0][:, None, None] * np.asarray(M)[None])


def cvxpy_value(F, c):
    x = cp.Variable(len(c))
    m = F[0].shape[0]
    con = [-np.eye(m) + sum(x[i] * F[i] for i in range(len(c))) << 0, x >= 0]
    return cp.Problem(cp.Minimize(c @ x), con).solve(solver=cp.CLARABEL)


class TestExamples:
    @pytest.mark.parametrize("backend", BACKENDS)
    @pytest.mark.parametrize("a", [2.0, 0.5, -3.0])
    def test_schur(self, backend, a):
        sol = sdp.solve(schur_problem(a), backend=backend)
        assert sol.status == sdp.OPTIMAL
        assert sol.objective_value == pytest.approx(a * a, rel=1e-6)
        assert sol.residual <= 1e-6

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_constant_identity_infeasible(self, backend):
        prob = ConicProblem([Variable("u", SCALAR)])
        prob.set_constraint(prob.constant(np.eye(2)))
        assert sdp.solve(prob, backend=backend).status == sdp.INFEASIBLE

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_constant_negative_identity(self, backend):
        prob = ConicProblem([Variable("u", SCALAR)])
        prob.set_constraint(prob.constant(-np.eye(2)))
        prob.set_objective(None)
        assert sdp.solve(prob, backend=backend).status == sdp.OPTIMAL

    def test_no_variables(self):
        prob = ConicProblem([])
        prob.set_constraint(-np.eye(3))
        assert sdp.solve(prob).status == sdp.OPTIMAL
        prob.set_constraint(np.eye(3))
        assert sdp.solve(prob).status == sdp.INFEASIBLE

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_infeasible_free_variable(self, backend):
        # [[x, 1], [1, -x]] always has a positive eigenvalue
        prob = ConicProblem([Variable("x", MATRIX, (1, 1))])
        x = prob.var("x")
        prob.set_constraint(bmat([[x, np.eye(1)], [np.eye(1), -x]], [1, 1], [1, 1]))
        sol = sdp.solve(prob, backend=backend)
        assert sol.status == sdp.INFEASIBLE
        assert sol.info["certificate"] in ("dual ray", "phase one")

    def test_diagonal_certificate(self):
        prob = ConicProblem([Variable("e", SCALAR, lower=1e-8)])
        e = prob.var("e")
        prob.set_constraint(bmat([[e + np.eye(1), np.eye(1)], [np.eye(1), -np.eye(1)]], [1, 1], [1, 1]))
        sol = sdp.solve(prob)
        assert sol.status == sdp.INFEASIBLE
        assert sol.info["certificate"] == "diagonal"

    def test_matrix_bound_holds(self):
        # min trace X s.t. A A' <= X, X >= mu I
        A = np.array([[1.0, 0.0], [0.5, 0.0]])
        prob = ConicProblem([Variable("X", SYMMETRIC, (2, 2), lower=0.1)])
        X = prob.var("X")
        prob.set_constraint(bmat([[-X, A], [A.T, -np.eye(2)]], [2, 2], [2, 2]))
        prob.set_objective(X.trace())
        sol = sdp.solve(prob)
        assert sol.status == sdp.OPTIMAL
        assert np.linalg.eigvalsh(sol.assignment["X"])[0] >= 0.1 - 1e-9


class TestDualRoute:
    @pytest.mark.parametrize("seed", range(8))
    def test_random_matches_cvxpy(self, seed):
        prob, F, c = random_lmi(seed)
        ref = cvxpy_value(F, c)
        values = [sdp.solve(prob, backend=b).objective_value for b in BACKENDS]
        for v in values:
            assert v == pytest.approx(ref, rel=1e-5, abs=1e-6)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_min_trace_cover(self, n, seed):
        # min trace X s.t. [[-X, A], [A', -I]] <= 0 has optimum trace(A A')
        A = np.random.default_rng(seed).standard_normal((n, n))
        prob = ConicProblem([Variable("X", SYMMETRIC, (n, n))])
        X = prob.var("X")
        prob.set_constraint(bmat([[-X, A], [A.T, -np.eye(n)]], [n, n], [n, n]))
        prob.set_objective(X.trace())
        sol = sdp.solve(prob)
        assert sol.status == sdp.OPTIMAL
        assert sol.objective_value == pytest.approx(np.trace(A @ A.T), rel=1e-6, abs=1e-8)


class TestProperties:
    def test_deterministic(self):
        prob, _, _ = random_lmi(3)
        a, b = sdp.solve(prob), sdp.solve(prob)
        assert a.status == b.status
        assert abs(a.objective_value - b.objective_value) <= 1e-9

    def test_certificate_is_independent(self):
        sol = sdp.solve(schur_problem(2.0))
        prob = schur_problem(2.0)
        M = prob.constraint.evaluate(sol.x)
        assert np.linalg.eigvalsh(M)[-1] == pytest.approx(sol.residual, abs=1e-12)

    def test_asymmetric_constraint_rejected(self):
        prob = ConicProblem([Variable("u", SCALAR)])
        with pytest.raises(ValueError):
            prob.set_constraint(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            sdp.solve(schur_problem(1.0), backend="nope")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_affine_midpoint(self, seed):
        prob, _, _ = random_lmi(seed % 1000)
        rng = np.random.default_rng(seed)
        v, w = rng.standard_normal((2, prob.nvars))
        F = prob.constraint
        np.testing.assert_allclose(F.evaluate(0.5 * (v + w)), 0.5 * (F.evaluate(v) + F.evaluate(w)), atol=1e-12)


class TestIpm:
    def test_direct_call(self):
        # min x s.t. diag(1 - x, x - 3) ... written as h - G x >= 0
        G = [np.array([[[-1.0, 0.0], [0.0, 1.0]]])]
        h = [np.array([[-1.0, 0.0], [0.0, 3.0]])]
        r = ipm.solve_lmi(np.array([1.0]), G, h)
        assert r.status == ipm.CONVERGED
        assert r.x[0] == pytest.approx(1.0, abs=1e-7)

    def test_infeasible_ray(self):
        # S = [[-x, -1], [-1, x]] >= 0 is impossible
        G = [np.array([[[1.0, 0.0], [0.0, -1.0]]])]
        h = [np.array([[0.0, -1.0], [-1.0, 0.0]])]
        r = ipm.solve_lmi(np.array([0.0]), G, h)
        assert r.status in (ipm.PRIMAL_INFEASIBLE, ipm.STALLED)
