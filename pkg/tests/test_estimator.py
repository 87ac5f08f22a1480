import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privsme.errors import DimensionMismatch, NotPositiveDefinite
from privsme.estimator import (
    BOUNDED_PRIVACY, PAPER_LITERAL, EstimatorState, GainSolution, StepContext, assemble_lambda,
    assemble_lmi, assemble_phi, build_problem, design_gains, lmi_residual, predict,
    update_confidence, verify_lmi,
)
from privsme.errors import Infeasible
from privsme.simulation import run_simulation

# trace of the stacked next-step shape matrices at step 0 of the ship scenario
SHIP_STEP0_TRACE = 1029.184406641474


def scalar_ctx(**kw):
    base = dict(
        k=0, C=np.array([[1.0]]), F=np.array([[1.0]]), H=[np.array([[1.0]])], D=[np.array([[1.0]])],
        R=np.array([[1.0]]), Q=[np.array([[1.0]])], second_moment=1.0, xhat=[np.array([1.0])],
        L=[np.array([[1.0]])], beta=np.array([1.0]), delta=np.array([0.0]), sigma=np.array([0.5]),
        theta=np.array([30.0]), weights=np.array([[1.0]]), kappa=9.0, sign_mode=BOUNDED_PRIVACY,
    )
    base.update(kw)
    return StepContext(**base)


@pytest.fixture(scope="module")
def ship_ctx0():
    from pathlib import Path
    from privsme.config import load_config
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "ship.yaml")
    _, ctx = run_simulation(cfg, 0, stop_at=0)
    return ctx


@pytest.fixture(scope="module")
def ship_gains0(ship_ctx0):
    return design_gains(ship_ctx0)


class TestPhi:
    def test_dimensions(self, ship_ctx0):
        N = ship_ctx0.N
        phi = assemble_phi(ship_ctx0, [ship_ctx0.C] * N, [np.zeros((2, 1))] * N)
        assert phi.shape == (10, 36)
        assert ship_ctx0.block_dims() == [1, 10, 5, 10, 5, 5]

    def test_cancellation(self, ship_ctx0):
        ctx = ship_ctx0
        phi = assemble_phi(ctx, [ctx.C] * ctx.N, [np.zeros((2, 1))] * ctx.N)
        np.testing.assert_array_equal(phi[:, 0], 0.0)
        np.testing.assert_allclose(phi[:, 16:26], np.kron(np.eye(5), ctx.C))
        L = np.zeros((10, 10))
        for i in range(5):
            L[2 * i:2 * i + 2, 2 * i:2 * i + 2] = ctx.L[i]
        beta = np.kron(np.diag(np.sqrt(ctx.beta)), np.eye(2))
        np.testing.assert_allclose(phi[:, 1:11], beta @ np.kron(np.eye(5), ctx.C) @ L)

    @pytest.mark.parametrize("a,b", [(0.3, 0.2), (1.0, 0.0), (-0.5, 1.5)])
    def test_single_sensor_expansion(self, a, b):
        phi = assemble_phi(scalar_ctx(), [np.array([[a]])], [np.array([[b]])])
        np.testing.assert_allclose(phi, [[1 - a, 1 - b, 1, 1, -b, b]], atol=1e-15)


class TestLambda:
    def test_skeleton(self, ship_ctx0):
        ctx = ship_ctx0
        from dataclasses import replace
        ctx = replace(ctx, delta=np.zeros(5))
        lam = assemble_lambda(ctx, [np.zeros((1, 1))] * 5, [0.0] * 4)
        expected = np.zeros_like(lam)
        expected[0, 0] = -5.0
        np.testing.assert_array_equal(lam, expected)

    def test_trigger_block_negative_definite(self, ship_ctx0):
        Psi = [np.array([[p]]) for p in (0.3, 1.0, 2.0, 0.01, 5.0)]
        lam = assemble_lambda(ship_ctx0, Psi, [0.1] * 4)
        assert np.linalg.eigvalsh(lam[-5:, -5:])[-1] < 0

    def test_single_sensor_corner(self):
        ctx = scalar_ctx(delta=np.array([0.25]))
        lam = assemble_lambda(ctx, [np.eye(1)], [0.1, 0.0, 0.1, 0.1])
        assert lam[0, 0] == pytest.approx(-0.45)

    def test_privacy_sign_modes(self):
        e2 = 0.2
        bounded = assemble_lambda(scalar_ctx(second_moment=2.0), [np.eye(1)], [0, e2, 0, 0])
        literal = assemble_lambda(scalar_ctx(second_moment=2.0, sign_mode=PAPER_LITERAL), [np.eye(1)], [0, e2, 0, 0])
        assert bounded[3, 3] == pytest.approx(-e2 / 2.0)
        assert literal[3, 3] == pytest.approx(e2 / 2.0)
        assert bounded[0, 0] - literal[0, 0] == pytest.approx(e2 * 9.0)


class TestAffinity:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_midpoint_and_symmetry(self, ship_ctx0, seed):
        prob, _ = build_problem(ship_ctx0)
        rng = np.random.default_rng(seed)
        v, w = rng.standard_normal((2, prob.nvars))
        F = prob.constraint
        mid = F.evaluate(0.5 * (v + w))
        np.testing.assert_allclose(mid, 0.5 * (F.evaluate(v) + F.evaluate(w)), atol=1e-10 * max(1.0, np.abs(mid).max()))
        M = F.evaluate(v)
        assert np.max(np.abs(M - M.T)) <= 1e-12 * max(1.0, np.abs(M).max())


class TestVerify:
    def test_hand_matrix(self):
        assert lmi_residual([[-1.0, 0.5], [0.5, -1.0]]) == pytest.approx(-0.5)

    def test_ship_step0(self, ship_gains0, ship_ctx0):
        assert ship_gains0.residual <= 1e-6
        assert verify_lmi(ship_gains0, ship_ctx0) <= 1e-6
        assert ship_gains0.trace_U_next == pytest.approx(SHIP_STEP0_TRACE, rel=1e-6)
        assert np.all(ship_gains0.eps > 0)
        for P in ship_gains0.Psi + ship_gains0.U_next:
            assert np.linalg.eigvalsh(P)[0] > 0

    def test_shrunk_U_detected(self, ship_gains0, ship_ctx0):
        g = ship_gains0
        bad = GainSolution(g.A_hat, g.B_hat, g.Psi, [0.1 * u for u in g.U_next], g.eps)
        assert verify_lmi(bad, ship_ctx0) > 0

    def test_paper_literal_infeasible(self, ship_ctx0):
        from dataclasses import replace
        with pytest.raises(Infeasible) as exc:
            design_gains(replace(ship_ctx0, sign_mode=PAPER_LITERAL))
        assert exc.value.step == 0

    def test_backends_agree(self, ship_ctx0, ship_gains0):
        other = design_gains(ship_ctx0, backend="cvxopt")
        assert other.residual <= 1e-6
        assert other.trace_U_next == pytest.approx(ship_gains0.trace_U_next, rel=1e-5)


class TestDegenerateScalar:
    small = 1e-6

    def ctx(self):
        s = self.small
        return scalar_ctx(C=np.array([[0.8]]), R=np.array([[s]]), Q=[np.array([[s]])], second_moment=s,
                          sigma=np.array([0.0]), delta=np.array([0.0]))

    def grid_best(self, ctx):
        """Smallest u on a coarse (a, b, u, eps) grid where the LMI's eigenvalues are all <= 0."""
        prob, _ = build_problem(ctx)
        off = prob.offsets
        pts = np.array(list(itertools.product(
            np.linspace(0.6, 1.0, 9), np.linspace(-0.4, 0.4, 9), np.geomspace(1e-3, 2.0, 25),
            *[[1e-3, 1e-2, 1e-1]] * 4)))
        X = np.zeros((len(pts), prob.nvars))
        X[:, off["d0"]] = 0.8 - pts[:, 0]  # xhat = 1
        X[:, off["B0"]] = pts[:, 1]
        X[:, off["U0"]] = pts[:, 2]
        X[:, off["Psi0"]] = 1.0
        for m in range(4):
            X[:, off[f"eps{m + 1}"]] = pts[:, 3 + m]
        coef = prob.constraint.coef
        M = coef[0] + np.tensordot(X, coef[1:], axes=1)
        ok = np.linalg.eigvalsh(M)[:, -1] <= 0.0
        return pts[ok, 2].min() if ok.any() else np.inf

    def test_feasible_and_tight(self):
        ctx = self.ctx()
        g = design_gains(ctx)
        assert g.residual <= 1e-6
        assert g.A_hat[0][0, 0] == pytest.approx(0.8, abs=1e-3)
        grid = self.grid_best(ctx)
        assert np.isfinite(grid)
        assert g.trace_U_next <= grid * (1 + 1e-6)
        assert g.trace_U_next < 1.0


class TestPredict:
    def est(self, xhat):
        return EstimatorState([np.atleast_1d(x) for x in xhat], [np.eye(np.size(xhat[0]))] * len(xhat), np.ones(len(xhat)))

    def gains(self, A, B, n):
        return GainSolution([np.atleast_2d(a) for a in A], [np.atleast_2d(b) for b in B],
                            [np.eye(1)] * n, [np.eye(np.shape(np.atleast_2d(A[0]))[0])] * n, np.ones(4))

    def test_scalar_two_sensors(self):
        est = self.est([2.0, 0.0])
        g = self.gains([0.5, 0.5], [0.1, 0.1], 2)
        out = predict(est, g, [[0.0, 1.0], [0.0, 0.0]], [np.array([0.0]), np.array([3.0])])
        assert out[0][0] == pytest.approx(1.3)

    def test_no_communication(self, rng):
        est = self.est([rng.standard_normal(2) for _ in range(3)])
        A = [rng.standard_normal((2, 2)) for _ in range(3)]
        W = np.ones((3, 3))
        res = [rng.standard_normal(1) for _ in range(3)]
        zero_B = predict(est, self.gains(A, [np.zeros((2, 1))] * 3, 3), W, res)
        zero_r = predict(est, self.gains(A, [rng.standard_normal((2, 1))] * 3, 3), W, [np.zeros(1)] * 3)
        for i in range(3):
            np.testing.assert_allclose(zero_B[i], A[i] @ est.xhat[i])
            np.testing.assert_allclose(zero_r[i], A[i] @ est.xhat[i])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_superposition(self, seed):
        rng = np.random.default_rng(seed)
        est = self.est([rng.standard_normal(2) for _ in range(3)])
        g = self.gains([rng.standard_normal((2, 2)) for _ in range(3)], [rng.standard_normal((2, 1)) for _ in range(3)], 3)
        W = rng.integers(0, 2, (3, 3)).astype(float)
        r1 = [rng.standard_normal(1) for _ in range(3)]
        r2 = [rng.standard_normal(1) for _ in range(3)]
        base = predict(est, g, W, [np.zeros(1)] * 3)
        p1, p2 = predict(est, g, W, r1), predict(est, g, W, r2)
        p12 = predict(est, g, W, [a + b for a, b in zip(r1, r2)])
        for i in range(3):
            np.testing.assert_allclose(p12[i] - base[i], (p1[i] - base[i]) + (p2[i] - base[i]), atol=1e-12)

    def test_dimension_mismatch(self):
        est = self.est([1.0, 2.0])
        with pytest.raises(DimensionMismatch):
            predict(est, self.gains([1.0, 1.0], [0.0, 0.0], 2), np.ones((3, 3)), [np.zeros(1)] * 2)


class TestUpdateConfidence:
    def test_pass_through_and_beta_fixed(self):
        U = [np.array([[2.0, 0.3], [0.3, 1.0]]), np.eye(2) * 5]
        est = EstimatorState([np.array([1.0, 2.0]), np.array([0.0, -1.0])], U, np.array([1.0, 0.7]))
        g = GainSolution([np.eye(2)] * 2, [np.zeros((2, 1))] * 2, [np.eye(1)] * 2, U, np.ones(4))
        for _ in range(100):
            new = update_confidence(est, g, np.zeros((2, 2)), [np.zeros(1)] * 2)
            for i in range(2):
                np.testing.assert_array_equal(new.xhat[i], est.xhat[i])
                np.testing.assert_allclose(new.U[i], U[i])
                np.testing.assert_allclose(new.L[i] @ new.L[i].T, U[i], rtol=1e-10)
            est = new
        np.testing.assert_array_equal(est.beta, [1.0, 0.7])

    def test_collapsed_U(self):
        est = EstimatorState([np.zeros(2)], [np.eye(2)], np.ones(1))
        g = GainSolution([np.eye(2)], [np.zeros((2, 1))], [np.eye(1)], [np.diag([1.0, 1e-14])], np.ones(4))
        with pytest.raises(NotPositiveDefinite):
            update_confidence(est, g, np.zeros((1, 1)), [np.zeros(1)])
