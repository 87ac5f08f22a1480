"""Second-moment steady state and the privacy budget formula.

The mean-square recursion with coefficients frozen at k = 0 is

    g' = C0 g C0' + C0 M0 C0' + F0 R0 F0'

and has a unique PSD fixed point whenever rho(C0) < 1.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BudgetUndefined, DimensionMismatch


@dataclass(frozen=True)
class SteadyStateReport:
    spectral_radius: float
    converged: bool
    g: np.ndarray
    iterations: int
    residual: float


def spectral_radius(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch("spectral radius needs a square matrix")
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def _as_matrices(g, C0, F0, M, R):
    g, C0, F0, M, R = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (g, C0, F0, M, R))
    n = C0.shape[0]
    if C0.shape != (n, n) or g.shape != (n, n) or M.shape != (n, n):
        raise DimensionMismatch("g, C0 and M must be square with matching size")
    if F0.shape[0] != n or R.shape != (F0.shape[1], F0.shape[1]):
        raise DimensionMismatch("F0 must be n by m and R m by m")
    return g, C0, F0, M, R


def lyapunov_step(g, C0, F0, M, R):
    """One step of the second-moment recursion."""
    g, C0, F0, M, R = _as_matrices(g, C0, F0, M, R)
    out = C0 @ (g + M) @ C0.T + F0 @ R @ F0.T
    return 0.5 * (out + out.T)


def solve_steady_state(C0, F0, M0, R0, tol=1e-10, max_iter=10_000):
    """Iterate the recursion from g = 0 until ||lyapunov_step(g) - g|| <= tol.

    The norm is Frobenius; ``iterations`` counts recursion evaluations. When
    rho(C0) >= 1 nothing is iterated and ``converged`` is False.
    """
    C0 = np.atleast_2d(np.asarray(C0, dtype=float))
    if C0.ndim != 2 or C0.shape[0] != C0.shape[1]:
        raise DimensionMismatch("C0 must be square")
    n = C0.shape[0]
    g = np.zeros((n, n))
    _as_matrices(g, C0, F0, M0, R0)
    rho = spectral_radius(C0)
    if rho >= 1.0:
        return SteadyStateReport(rho, False, g, 0, float("inf"))
    residual = float("inf")
    it = 0
    while it < max_iter:
        g_next = lyapunov_step(g, C0, F0, M0, R0)
        it += 1
        residual = float(np.linalg.norm(g_next - g))
        if residual <= tol:
            break
        g = g_next
    # g is the iterate whose recursion residual was measured last
    return SteadyStateReport(rho, residual <= tol, g, it, residual)


def schedule_spectral_radii(C, ks):
    """rho(C_k) for every k in ``ks``; context for periodic plants."""
    return np.array([spectral_radius(C(k)) for k in ks])


def privacy_epsilon(varsigma, c, q, a_hat):
    """Budget varsigma * q / (c * (q - a_hat)) of a node with Laplace scale c q^k."""
    if not varsigma > 0.0:
        raise ValueError("varsigma must be positive")
    if not c > 0.0:
        raise ValueError("c must be positive")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if not a_hat >= 0.0:
        raise ValueError("a_hat must be nonnegative")
    if q <= a_hat:
        raise BudgetUndefined(f"decay rate q={q} does not exceed the gain a_hat={a_hat}")
    return varsigma * q / (c * (q - a_hat))


def a_hat_from_gains(A_hat: Sequence[np.ndarray]):
    """Scalar gain for the budget: spectral radius of the time-averaged matrix."""
    if len(A_hat) == 0:
        raise ValueError("need at least one gain matrix")
    return spectral_radius(np.mean([np.atleast_2d(a) for a in A_hat], axis=0))
