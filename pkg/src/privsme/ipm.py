"""Dense primal-dual interior-point method for block-diagonal LMIs.

Solves

    minimize    c'x
    subject to  S = h - G(x),  S >= 0   (block diagonal)

together with its dual

    maximize    -<h, Z>
    subject to  G*(Z) + c = 0,  Z >= 0

with Nesterov-Todd scaling and Mehrotra's predictor-corrector rule from an
infeasible starting point. ``G`` is given per block as a stack of symmetric
matrices of shape (d, m, m), ``h`` per block as (m, m).

At each iterate the scaling matrix R of a block satisfies
R' Z R = inv(R) S inv(R)' = diag(lam), so the Schur complement of the Newton
system is Gh' Gh with Gh_j = inv(R) G_j inv(R)'.
"""

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, solve_triangular

CONVERGED = "optimal"
PRIMAL_INFEASIBLE = "primal infeasible"
STALLED = "unknown"
BROKEN = "numerical failure"


@dataclass
class IpmResult:
    status: str
    x: np.ndarray
    S: List[np.ndarray]
    Z: List[np.ndarray]
    iterations: int
    primal_objective: float
    dual_objective: float
    relative_gap: float
    primal_infeasibility: float
    dual_infeasibility: float


def _sym(X):
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def _apply(G, x):
    return [(x @ g.reshape(g.shape[0], -1)).reshape(g.shape[1:]) for g in G]


def _adjoint(G, Z):
    return sum(g.reshape(g.shape[0], -1) @ z.ravel() for g, z in zip(G, Z))


def _inner(A, B):
    return float(sum(np.vdot(a, b) for a, b in zip(A, B)))


class _Scaling:
    """NT scaling of one block."""

    def __init__(self, S, Z):
        Ls = np.linalg.cholesky(S)
        Lz = np.linalg.cholesky(Z)
        _, lam, Vt = np.linalg.svd(Lz.T @ Ls)
        # R = Ls V diag(lam)^-1/2 ; R^-1 = diag(lam)^1/2 V' Ls^-1
        self.lam = lam
        self.R = (Ls @ Vt.T) / np.sqrt(lam)
        self.Rinv = (np.sqrt(lam)[:, None] * Vt) @ solve_triangular(Ls, np.eye(len(lam)), lower=True)

    def jordan_solve(self, rhs):
        """X with lam o X = rhs, where a o b = (ab + ba)/2."""
        return 2.0 * rhs / (self.lam[:, None] + self.lam[None, :])


def _max_step(lam, dX):
    """Largest a with diag(lam) + a dX >= 0 (dX in scaled coordinates)."""
    s = 1.0 / np.sqrt(lam)
    ev = eigh(_sym(s[:, None] * dX * s[None, :]), eigvals_only=True, subset_by_index=[0, 0],
              check_finite=False)[0]
    return np.inf if ev >= 0.0 else -1.0 / ev


class _Factored:
    """G_j = sum_a s_a v_a v_a' for every j of one block, all terms side by side.

    The coefficient matrices are fixed for a whole solve and typically of
    rank 1 to 4, so scaled products are formed on the thin factors.
    """

    def __init__(self, G, rtol=1e-13):
        d, m, _ = G.shape
        w, V = np.linalg.eigh(G)
        keep = np.abs(w) > rtol * np.max(np.abs(w), axis=1, keepdims=True)
        keep &= np.any(G != 0.0, axis=(1, 2))[:, None]
        owner, col = np.nonzero(keep)
        self.Vt = V[owner, :, col]  # (terms, m), row a is v_a
        self.s = w[owner, col]
        self.P = np.zeros((d, owner.size))
        self.P[owner, np.arange(owner.size)] = 1.0

    def scaled(self, T):
        """Factors of T G_j T'."""
        return self.Vt @ T.T

    def schur(self, W):
        K = W @ W.T
        return self.P @ ((K * K) * np.outer(self.s, self.s)) @ self.P.T

    def adjoint(self, W, X):
        """<T G_j T', X> for every j."""
        return self.P @ (self.s * np.sum((W @ X) * W, axis=1))

    def apply(self, W, dx):
        """sum_j dx_j T G_j T'."""
        return (W.T * (self.s * (self.P.T @ dx))) @ W


def _jordan(A, B):
    return 0.5 * (A @ B + B @ A)


def _init_point(c, G, h, sizes, n):
    g_norm = np.sqrt(sum(np.sum(g * g, axis=(1, 2)) for g in G))
    h_norm = np.sqrt(_inner(h, h))
    xi = max(10.0, np.sqrt(n), n * np.max((1.0 + np.abs(c)) / (1.0 + g_norm), initial=0.0))
    zeta = max(10.0, np.sqrt(n), np.max(g_norm, initial=0.0), h_norm)
    S = [zeta * np.eye(m) for m in sizes]
    Z = [xi * np.eye(m) for m in sizes]
    return np.zeros(c.size), S, Z


def solve_lmi(c, G, h, abstol=1e-9, reltol=1e-9, feastol=1e-9, max_iter=100,
              step=0.98, ray_tol=1e-9):
    """Run the interior-point iteration; see the module docstring."""
    c = np.asarray(c, dtype=float)
    G = [np.asarray(g, dtype=float) for g in G]
    h = [np.asarray(m, dtype=float) for m in h]
    sizes = [m.shape[0] for m in h]
    n = sum(sizes)
    h_norm = 1.0 + np.sqrt(_inner(h, h))
    c_norm = 1.0 + np.linalg.norm(c)

    x, S, Z = _init_point(c, G, h, sizes, n)
    fac_G = [_Factored(g) for g in G]
    status = STALLED
    it = 0
    for it in range(1, max_iter + 1):
        rp = [hb - gx - s for hb, gx, s in zip(h, _apply(G, x), S)]
        rd = -c - _adjoint(G, Z)
        gap = _inner(S, Z)
        mu = gap / n
        pobj = float(c @ x)
        dobj = -_inner(h, Z)
        pinf = np.sqrt(_inner(rp, rp)) / h_norm
        dinf = np.linalg.norm(rd) / c_norm
        rgap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj))
        if pinf <= feastol and dinf <= feastol and (gap <= abstol or rgap <= reltol):
            status = CONVERGED
            break
        # Farkas ray for the primal: Z >= 0, G*(Z) ~ 0, <h, Z> < 0
        trZ = sum(np.trace(z) for z in Z)
        if dobj > 0.0 and np.linalg.norm(_adjoint(G, Z)) <= ray_tol * dobj and dobj > ray_tol * trZ * h_norm:
            status = PRIMAL_INFEASIBLE
            break

        try:
            sc = [_Scaling(s, z) for s, z in zip(S, Z)]
        except np.linalg.LinAlgError:
            status = BROKEN
            break
        Wf = [f.scaled(w.Rinv) for f, w in zip(fac_G, sc)]
        M = sum(f.schur(W) for f, W in zip(fac_G, Wf))
        try:
            fac = cho_factor(M, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            status = BROKEN
            break
        rp_s = [w.Rinv @ r @ w.Rinv.T for w, r in zip(sc, rp)]

        def direction(rhs_c):
            # Y = dS~ + dZ~ solves lam o Y = rhs_c
            Y = [w.jordan_solve(r) for w, r in zip(sc, rhs_c)]
            t = [y - r for y, r in zip(Y, rp_s)]
            rhs = rd - sum(f.adjoint(W, tt) for f, W, tt in zip(fac_G, Wf, t))
            dx = cho_solve(fac, rhs, check_finite=False)
            dS_s = [r - f.apply(W, dx) for r, f, W in zip(rp_s, fac_G, Wf)]
            dZ_s = [y - ds for y, ds in zip(Y, dS_s)]
            return dx, dS_s, dZ_s

        lam2 = [np.diag(w.lam ** 2) for w in sc]
        _, dS_a, dZ_a = direction([-l2 for l2 in lam2])
        ap = min(1.0, min(_max_step(w.lam, ds) for w, ds in zip(sc, dS_a)))
        ad = min(1.0, min(_max_step(w.lam, dz) for w, dz in zip(sc, dZ_a)))
        mu_aff = sum(
            np.vdot(np.diag(w.lam) + ap * ds, np.diag(w.lam) + ad * dz)
            for w, ds, dz in zip(sc, dS_a, dZ_a)
        ) / n
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
        rhs_c = [sigma * mu * np.eye(len(w.lam)) - l2 - _jordan(ds, dz)
                 for w, l2, ds, dz in zip(sc, lam2, dS_a, dZ_a)]
        dx, dS_s, dZ_s = direction(rhs_c)
        ap = min(1.0, step * min(_max_step(w.lam, ds) for w, ds in zip(sc, dS_s)))
        ad = min(1.0, step * min(_max_step(w.lam, dz) for w, dz in zip(sc, dZ_s)))

        x = x + ap * dx
        S = [_sym(s + ap * (w.R @ ds @ w.R.T)) for s, w, ds in zip(S, sc, dS_s)]
        Z = [_sym(z + ad * (w.Rinv.T @ dz @ w.Rinv)) for z, w, dz in zip(Z, sc, dZ_s)]
        if not np.all(np.isfinite(x)):
            status = BROKEN
            break

    rp = [hb - gx - s for hb, gx, s in zip(h, _apply(G, x), S)]
    pobj = float(c @ x)
    dobj = -_inner(h, Z)
    return IpmResult(
        status, x, S, Z, it, pobj, dobj,
        abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj)),
        float(np.sqrt(_inner(rp, rp)) / h_norm),
        float(np.linalg.norm(-c - _adjoint(G, Z)) / c_norm),
    )
