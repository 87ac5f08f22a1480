import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privsme.ellipsoid import Ellipsoid, cholesky_lower, contains, sample_boundary, sample_uniform
from privsme.errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric


def random_spd(rng, n):
    A = rng.standard_normal((n, n))
    return A @ A.T + np.eye(n)


class TestCholesky:
    @pytest.mark.parametrize("P,L", [
        (np.eye(2), np.eye(2)),
        (np.diag([4.0, 9.0]), np.diag([2.0, 3.0])),
    ])
    def test_known_factors(self, P, L):
        np.testing.assert_allclose(cholesky_lower(P).L, L, atol=1e-15)

    def test_random_reconstruction(self, rng):
        P = random_spd(rng, 4)
        L = cholesky_lower(P).L
        assert np.allclose(L, np.tril(L))
        assert np.all(np.diag(L) > 0)
        assert np.linalg.norm(L @ L.T - P) / np.linalg.norm(P) <= 1e-10

    @pytest.mark.parametrize("P", [np.zeros((2, 2)), np.diag([1.0, -1.0]), np.diag([1.0, 1e-13])])
    def test_collapsed_pivot(self, P):
        with pytest.raises(NotPositiveDefinite):
            cholesky_lower(P)

    def test_asymmetric(self):
        with pytest.raises(NotSymmetric):
            cholesky_lower([[1.0, 0.5], [0.4, 1.0]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_reconstruction_property(self, n, seed):
        P = random_spd(np.random.default_rng(seed), n)
        L = cholesky_lower(P).L
        assert np.linalg.norm(L @ L.T - P) / np.linalg.norm(P) <= 1e-10


class TestContains:
    P = np.array([[4.0, 1.0], [1.0, 2.0]])
    c = np.array([1.0, -2.0])

    @pytest.mark.parametrize("beta", [0.5, 1.0, 3.0])
    def test_center_and_boundary(self, beta):
        E = Ellipsoid(self.c, self.P, beta)
        L = cholesky_lower(self.P).L
        e1 = np.array([1.0, 0.0])
        assert contains(E, self.c)
        assert contains(E, self.c + np.sqrt(beta) * L @ e1)
        assert not contains(E, self.c + 2 * np.sqrt(beta) * L @ e1)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            contains(Ellipsoid(self.c, self.P), np.zeros(3))

    def test_zero_scale_is_a_point(self):
        E = Ellipsoid(self.c, self.P, 0.0)
        assert contains(E, self.c)
        assert not contains(E, self.c + 1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_congruence_invariance(self, n, seed):
        rng = np.random.default_rng(seed)
        P = random_spd(rng, n)
        c = rng.standard_normal(n)
        beta = float(rng.uniform(0.1, 5.0))
        T = rng.standard_normal((n, n)) + 3 * np.eye(n)
        x = c + rng.standard_normal(n) * rng.uniform(0.1, 3.0)
        E = Ellipsoid(c, P, beta)
        ET = Ellipsoid(T @ c, T @ P @ T.T, beta)
        m1, m2 = E.mahalanobis_sq(x), ET.mahalanobis_sq(T @ x)
        assert abs(m1 - m2) <= 1e-8 * max(1.0, m1)
        if abs(m1 - beta) > 1e-8 * beta:
            assert contains(E, x) == contains(ET, T @ x)


class TestSampling:
    def test_draws_are_contained(self, rng):
        E = Ellipsoid([0.5, -1.0, 2.0], random_spd(rng, 3), 0.7)
        assert all(contains(E, sample_uniform(E, rng)) for _ in range(100_000))

    def test_boundary_draws_on_surface(self, rng):
        E = Ellipsoid([0.0, 0.0], [[0.4, 0.1], [0.1, 0.2]], 1.0)
        for _ in range(100):
            assert E.mahalanobis_sq(sample_boundary(E, rng)) == pytest.approx(1.0, rel=1e-12)

    def test_degenerate_returns_center(self, rng):
        E = Ellipsoid([3.0, 4.0], np.eye(2), 0.0)
        np.testing.assert_array_equal(sample_uniform(E, rng), [3.0, 4.0])

    def test_one_dimensional_mean(self, rng):
        E = Ellipsoid([0.0], [[1.0]], 1.0)
        draws = np.array([sample_uniform(E, rng)[0] for _ in range(1_000_000)])
        assert abs(draws.mean()) <= 0.01
        # uniform on (-1, 1) has variance 1/3
        assert draws.var() == pytest.approx(1.0 / 3.0, rel=0.01)
