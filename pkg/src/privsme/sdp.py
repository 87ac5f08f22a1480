"""Small dense SDP engine: minimize a linear objective subject to one affine
symmetric matrix being negative semidefinite, plus lower bounds on the variables.

Problems are stated with :class:`AffineMatrix` expressions over the flat
coordinate vector of the declared variables. The default backend is the
dense interior-point method in :mod:`privsme.ipm`; CVXOPT's ``solvers.sdp``
is available as an alternative. Every optimal result is re-certified with a
separate eigenvalue computation.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

SCALAR = "scalar"
SYMMETRIC = "symmetric"
MATRIX = "matrix"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
FAILED = "failed"


class AffineMatrix:
    """Matrix-valued affine function  X(x) = C0 + sum_j x_j C_j.

    ``coef`` has shape (d + 1, rows, cols); ``coef[0]`` is the constant.
    Supports the handful of operations needed for block LMI assembly and
    interoperates with plain numpy arrays.
    """

    __array_ufunc__ = None

    def __init__(self, coef):
        coef = np.asarray(coef, dtype=float)
        if coef.ndim != 3:
            raise ValueError("coef must have shape (d + 1, rows, cols)")
        self.coef = coef

    @classmethod
    def constant(cls, M, d):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        coef = np.zeros((d + 1,) + M.shape)
        coef[0] = M
        return cls(coef)

    @property
    def shape(self):
        return self.coef.shape[1:]

    @property
    def nvars(self):
        return self.coef.shape[0] - 1

    @property
    def T(self):
        return AffineMatrix(self.coef.transpose(0, 2, 1))

    def _lift(self, other):
        if isinstance(other, AffineMatrix):
            if other.nvars != self.nvars:
                raise ValueError("expressions live in different variable spaces")
            return other.coef
        other = np.asarray(other, dtype=float)
        if other.ndim == 0:
            other = np.full(self.shape, float(other))
        out = np.zeros_like(self.coef)
        out[0] = other
        return out

    def __add__(self, other):
        return AffineMatrix(self.coef + self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return AffineMatrix(self.coef - self._lift(other))

    def __rsub__(self, other):
        return AffineMatrix(self._lift(other) - self.coef)

    def __neg__(self):
        return AffineMatrix(-self.coef)

    def __mul__(self, s):
        if isinstance(s, AffineMatrix) or np.ndim(s) != 0:
            raise TypeError("only scalar multiplication is affine")
        return AffineMatrix(self.coef * float(s))

    __rmul__ = __mul__

    def __matmul__(self, M):
        if isinstance(M, AffineMatrix):
            raise TypeError("product of two affine expressions is not affine")
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M[:, None]
        return AffineMatrix(self.coef @ M)

    def __rmatmul__(self, M):
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M[None, :]
        return AffineMatrix(np.einsum("ij,djk->dik", M, self.coef))

    def trace(self):
        return AffineMatrix(np.trace(self.coef, axis1=1, axis2=2)[:, None, None])

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return self.coef[0] + np.tensordot(x, self.coef[1:], axes=1)

    def __repr__(self):
        return f"AffineMatrix(shape={self.shape}, nvars={self.nvars})"


def _space(blocks):
    for b in blocks:
        if isinstance(b, AffineMatrix):
            return b.nvars
    return None


def bmat(blocks, row_dims, col_dims):
    """Block matrix from a grid of arrays / AffineMatrix / None (zero).

    Returns a numpy array when nothing in the grid is affine.
    """
    flat = [b for row in blocks for b in row if b is not None]
    d = _space(flat)
    R, C = sum(row_dims), sum(col_dims)
    ro = np.concatenate([[0], np.cumsum(row_dims)]).astype(int)
    co = np.concatenate([[0], np.cumsum(col_dims)]).astype(int)
    out = np.zeros((R, C)) if d is None else np.zeros((d + 1, R, C))
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None:
                continue
            shape = (row_dims[i], col_dims[j])
            if isinstance(b, AffineMatrix):
                if b.shape != shape:
                    raise ValueError(f"block ({i},{j}) has shape {b.shape}, expected {shape}")
                out[:, ro[i]:ro[i + 1], co[j]:co[j + 1]] = b.coef
            else:
                b = np.asarray(b, dtype=float)
                if b.ndim == 0:
                    b = np.full(shape, float(b))
                b = b.reshape(shape)
                if d is None:
                    out[ro[i]:ro[i + 1], co[j]:co[j + 1]] = b
                else:
                    out[0, ro[i]:ro[i + 1], co[j]:co[j + 1]] = b
    return out if d is None else AffineMatrix(out)


def block_diag(blocks):
    rows = [np.shape(b)[0] if not isinstance(b, AffineMatrix) else b.shape[0] for b in blocks]
    cols = [np.shape(b)[1] if not isinstance(b, AffineMatrix) else b.shape[1] for b in blocks]
    grid = [[b if i == j else None for j, b in enumerate(blocks)] for i in range(len(blocks))]
    return bmat(grid, rows, cols)


@dataclass(frozen=True)
class Variable:
    """A named decision variable.

    ``lower`` is a scalar lower bound for scalars and the floor mu in
    X >= mu*I for symmetric matrices; general matrices are unbounded.
    """

    name: str
    kind: str
    shape: tuple = ()
    lower: Optional[float] = None

    def __post_init__(self):
        if self.kind == SCALAR:
            object.__setattr__(self, "shape", ())
        elif self.kind == SYMMETRIC:
            if len(self.shape) != 2 or self.shape[0] != self.shape[1]:
                raise ValueError("symmetric variables need a square shape")
        elif self.kind == MATRIX:
            if len(self.shape) != 2:
                raise ValueError("matrix variables need a 2-D shape")
            if self.lower is not None:
                raise ValueError("general matrix variables cannot carry a lower bound")
        else:
            raise ValueError(f"unknown variable kind {self.kind!r}")

    @property
    def size(self):
        if self.kind == SCALAR:
            return 1
        if self.kind == SYMMETRIC:
            n = self.shape[0]
            return n * (n + 1) // 2
        return self.shape[0] * self.shape[1]


class ConicProblem:
    """Declared variables, a linear objective and one constraint  F(x) <= 0."""

    def __init__(self, variables):
        self.variables: List[Variable] = list(variables)
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")
        self.offsets: Dict[str, int] = {}
        off = 0
        for v in self.variables:
            self.offsets[v.name] = off
            off += v.size
        self.nvars = off
        self.objective: Optional[AffineMatrix] = None
        self.constraint: Optional[AffineMatrix] = None

    def var(self, name):
        """AffineMatrix expression of one variable (scalars come back 1x1)."""
        v = self._get(name)
        off = self.offsets[name]
        shape = (1, 1) if v.kind == SCALAR else v.shape
        coef = np.zeros((self.nvars + 1,) + shape)
        if v.kind == SCALAR:
            coef[1 + off, 0, 0] = 1.0
        elif v.kind == SYMMETRIC:
            n = v.shape[0]
            t = 1 + off
            for i in range(n):
                for j in range(i + 1):
                    coef[t, i, j] = 1.0
                    coef[t, j, i] = 1.0
                    t += 1
        else:
            coef[1 + off:1 + off + v.size] = np.eye(v.size).reshape((v.size,) + shape)
        return AffineMatrix(coef)

    def constant(self, M):
        return AffineMatrix.constant(M, self.nvars)

    def _get(self, name):
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(f"undeclared variable {name!r}")

    def set_objective(self, expr):
        if expr is None:
            self.objective = None
            return
        if not isinstance(expr, AffineMatrix) or expr.shape != (1, 1):
            raise ValueError("objective must be a 1x1 affine expression")
        self.objective = expr

    def set_constraint(self, expr):
        if not isinstance(expr, AffineMatrix):
            expr = self.constant(expr)
        if expr.shape[0] != expr.shape[1]:
            raise ValueError("constraint must be square")
        if expr.nvars != self.nvars:
            raise ValueError("constraint built in a different variable space")
        asym = np.max(np.abs(expr.coef - expr.coef.transpose(0, 2, 1)), initial=0.0)
        scale = max(1.0, np.max(np.abs(expr.coef), initial=0.0))
        if asym > 1e-12 * scale:
            raise ValueError(f"constraint is not symmetric (asymmetry {asym:.2e})")
        self.constraint = AffineMatrix(0.5 * (expr.coef + expr.coef.transpose(0, 2, 1)))

    def unpack(self, x):
        """Split a flat coordinate vector into named numeric values."""
        out = {}
        for v in self.variables:
            off = self.offsets[v.name]
            seg = np.asarray(x[off:off + v.size], dtype=float)
            if v.kind == SCALAR:
                out[v.name] = float(seg[0])
            elif v.kind == SYMMETRIC:
                n = v.shape[0]
                X = np.zeros((n, n))
                X[np.tril_indices(n)] = seg
                out[v.name] = X + np.tril(X, -1).T
            else:
                out[v.name] = seg.reshape(v.shape)
        return out

    def bound_blocks(self):
        """Each variable lower bound as an affine matrix required <= 0."""
        blocks = []
        for v in self.variables:
            if v.lower is None:
                continue
            X = self.var(v.name)
            n = X.shape[0]
            blocks.append(-X + v.lower * np.eye(n))
        return blocks


@dataclass
class ConicSolution:
    status: str
    assignment: Dict[str, object] = field(default_factory=dict)
    objective_value: float = float("nan")
    x: Optional[np.ndarray] = None
    residual: float = float("nan")
    info: Dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class Tolerances:
    abstol: float = 1e-8
    reltol: float = 1e-8
    feastol: float = 1e-8
    max_iter: int = 500
    certify: float = 1e-6
    bound_slack: float = 1e-9
    accept_gap: float = 1e-5


@dataclass
class Preconditioner:
    """Feasibility-preserving rescaling applied before the numeric solve.

    ``congruence`` is an invertible T; the solver sees T' F T <= 0 instead of
    F <= 0. ``scales`` maps a symmetric variable X to an invertible N and the
    solver works with V where X = N V N'. Neither changes the feasible set or
    the optimum; both only balance magnitudes.
    """

    congruence: Optional[np.ndarray] = None
    scales: Dict[str, np.ndarray] = field(default_factory=dict)


def constraint_residual(F, x):
    """Largest eigenvalue of F(x); positive means the LMI is violated."""
    M = F.evaluate(x)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def _diagonal_certificate(problem):
    """Cheap infeasibility proof: some diagonal entry of F is bounded below by
    a positive number over the variable bounds (so F cannot be <= 0)."""
    lower = np.full(problem.nvars, -np.inf)
    for v in problem.variables:
        if v.lower is None:
            continue
        off = problem.offsets[v.name]
        if v.kind == SCALAR:
            lower[off] = v.lower
        else:
            n = v.shape[0]
            t = off
            for i in range(n):
                for j in range(i + 1):
                    if i == j:
                        lower[t] = v.lower
                    t += 1
    coef = problem.constraint.coef
    diag = np.einsum("dii->di", coef)
    for r in range(diag.shape[1]):
        c = diag[1:, r]
        used = c != 0.0
        if np.any(c[used] < 0.0) or np.any(~np.isfinite(lower[used])):
            continue
        bound = diag[0, r] + float(c[used] @ lower[used])
        if bound > 0.0:
            return r, bound
    return None


def _svec_map(N):
    """Matrix of V -> N V N' on lower-triangle coordinates (row-major, i >= j)."""
    n = N.shape[0]
    idx = [(i, j) for i in range(n) for j in range(i + 1)]
    T = np.empty((len(idx), len(idx)))
    for b, (i, j) in enumerate(idx):
        E = np.zeros((n, n))
        E[i, j] = E[j, i] = 1.0
        M = N @ E @ N.T
        T[:, b] = [M[p, q] for p, q in idx]
    return T


def _congruence(coef, T):
    return np.swapaxes(T, 0, 1) @ coef @ T


def _bounded(problem):
    return [v for v in problem.variables if v.lower is not None]


def _transformed_blocks(problem, pre):
    """(c, [G blocks], [h blocks], Tv) in solver coordinates, before column scaling.

    Block 0 is the main constraint; block 1 (if present) stacks every
    variable bound on its diagonal.
    """
    d = problem.nvars
    Tv = np.eye(d)
    inv_scale = {}
    for name, N in pre.scales.items():
        v = problem._get(name)
        if v.kind != SYMMETRIC:
            raise ValueError("only symmetric variables take a matrix scale")
        N = np.atleast_2d(np.asarray(N, dtype=float))
        off = problem.offsets[name]
        Tv[off:off + v.size, off:off + v.size] = _svec_map(N)
        inv_scale[name] = np.linalg.inv(N)

    main = problem.constraint.coef
    if pre.congruence is not None:
        main = _congruence(main, np.asarray(pre.congruence, dtype=float))
    blocks = [main]
    bounds = []
    for v, blk in zip(_bounded(problem), problem.bound_blocks()):
        co = blk.coef
        if v.name in inv_scale:
            Ni = inv_scale[v.name]
            co = Ni @ co @ Ni.T
        bounds.append(co)
    if bounds:
        m = sum(b.shape[1] for b in bounds)
        B = np.zeros((d + 1, m, m))
        o = 0
        for b in bounds:
            k = b.shape[1]
            B[:, o:o + k, o:o + k] = b
            o += k
        blocks.append(B)

    G, h = [], []
    for co in blocks:
        m = co.shape[1]
        flat = (Tv.T @ co[1:].reshape(d, m * m)).reshape(d, m, m)
        G.append(flat)
        h.append(-co[0])
    c = np.zeros(d) if problem.objective is None else Tv.T @ problem.objective.coef[1:, 0, 0]
    return c, G, h, Tv


def _project_bounds(problem, x):
    """Lift bounded variables onto their floors (removes sub-floor round-off)."""
    x = np.array(x, dtype=float)
    for v in _bounded(problem):
        off = problem.offsets[v.name]
        if v.kind == SCALAR:
            x[off] = max(x[off], v.lower)
            continue
        n = v.shape[0]
        X = np.zeros((n, n))
        X[np.tril_indices(n)] = x[off:off + v.size]
        X = X + np.tril(X, -1).T
        w, Q = np.linalg.eigh(X)
        if w[0] < v.lower:
            X = (Q * np.maximum(w, v.lower)) @ Q.T
            x[off:off + v.size] = X[np.tril_indices(n)]
    return x


def _native(c, G, h, tol):
    from . import ipm

    r = ipm.solve_lmi(c, G, h, abstol=tol.abstol, reltol=tol.reltol, feastol=tol.feastol,
                      max_iter=min(tol.max_iter, 200))
    return r.status, r.x, r.iterations, r.relative_gap


def _cvxopt(c, G, h, tol):
    from cvxopt import matrix, solvers

    d = c.size
    Gs = [matrix(np.ascontiguousarray(g.reshape(d, -1).T)) for g in G]
    hs = [matrix(np.ascontiguousarray(m)) for m in h]
    options = {"show_progress": False, "maxiters": tol.max_iter, "abstol": tol.abstol,
               "reltol": tol.reltol, "feastol": tol.feastol}
    try:
        sol = solvers.sdp(matrix(c), Gs=Gs, hs=hs, kktsolver="chol", options=options)
    except (ArithmeticError, ValueError):
        return "numerical failure", None, None, None
    x = None if sol["x"] is None else np.array(sol["x"]).ravel()
    return sol["status"], x, sol.get("iterations"), sol.get("relative gap")


BACKENDS = {"native": _native, "cvxopt": _cvxopt}


def _phase_one(G, h, tol, backend):
    """min t s.t. every block <= t I, t >= -1; returns t* (inf on failure)."""
    d = G[0].shape[0]
    Ge = []
    for g in G:
        m = g.shape[1]
        Ge.append(np.concatenate([g, -np.eye(m)[None]], axis=0))
    Ge.append(np.concatenate([np.zeros((d, 1, 1)), -np.ones((1, 1, 1))], axis=0))
    he = list(h) + [np.ones((1, 1))]
    c = np.zeros(d + 1)
    c[-1] = 1.0
    status, y, _, _ = backend(c, Ge, he, tol)
    if y is None or not np.all(np.isfinite(y)):
        return np.inf
    # evaluate the achieved t independently of the solver's own bookkeeping
    return max(float(np.linalg.eigvalsh(-hb + (y[:-1] @ g.reshape(d, -1)).reshape(hb.shape))[-1])
               for g, hb in zip(G, h))


def solve(problem, tol=None, precondition=None, backend="native"):
    """Solve ``problem`` and return a certified :class:`ConicSolution`.

    status is OPTIMAL only when the independent eigenvalue check gives
    lambda_max(F(x)) <= tol.certify and all bounds hold to tol.bound_slack.
    INFEASIBLE comes from the diagonal presolve, the backend's own
    infeasibility test, or a phase-one problem whose optimal max-eigenvalue
    exceeds tol.certify.
    """
    tol = tol or Tolerances()
    pre = precondition or Preconditioner()
    if problem.constraint is None:
        raise ValueError("problem has no constraint")
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    run = BACKENDS[backend]
    F = problem.constraint
    d = problem.nvars

    cert = _diagonal_certificate(problem)
    if cert is not None:
        row, bound = cert
        return ConicSolution(INFEASIBLE, info={"certificate": "diagonal", "row": row, "bound": bound})

    c0 = 0.0 if problem.objective is None else float(problem.objective.coef[0, 0, 0])
    c_orig = np.zeros(d) if problem.objective is None else problem.objective.coef[1:, 0, 0]
    if d == 0:
        res = constraint_residual(F, np.zeros(0))
        status = OPTIMAL if res <= tol.certify else INFEASIBLE
        return ConicSolution(status, {}, c0, np.zeros(0), res)

    c, G, h, Tv = _transformed_blocks(problem, pre)
    col = np.sqrt(sum(np.sum(g * g, axis=(1, 2)) for g in G))
    used = col > 0.0
    if np.any(c[~used] != 0.0):
        return ConicSolution(FAILED, info={"reason": "objective unbounded along an unconstrained direction"})
    # coordinates absent from every block are fixed at zero
    s = np.zeros(d)
    s[used] = 1.0 / col[used]
    G = [g[used] * s[used, None, None] for g in G]
    c = c[used] * s[used]
    c_scale = np.max(np.abs(c), initial=0.0)
    if c_scale > 0.0:
        c = c / c_scale

    if used.any():
        status, y_used, iters, rel_gap = run(c, G, h, tol)
    else:
        status, y_used, iters, rel_gap = "optimal", np.zeros(0), 0, 0.0
    y = None
    if y_used is not None:
        y = np.zeros(d)
        y[used] = y_used
    info = {"backend": backend, "solver_status": status, "iterations": iters, "relative_gap": rel_gap}
    if status == "primal infeasible":
        info["certificate"] = "dual ray"
        return ConicSolution(INFEASIBLE, info=info)

    certified = converged = False
    if y is not None and np.all(np.isfinite(y)):
        x = _project_bounds(problem, Tv @ (s * y))
        res = constraint_residual(F, x)
        bound_viol = max((constraint_residual(b, x) for b in problem.bound_blocks()), default=-np.inf)
        info.update(residual=res, bound_violation=bound_viol)
        certified = res <= tol.certify and bound_viol <= tol.bound_slack
        converged = status == "optimal" or (
            rel_gap is not None and np.isfinite(rel_gap) and abs(rel_gap) <= tol.accept_gap
        )
    if converged and certified:
        return ConicSolution(OPTIMAL, problem.unpack(x), float(c_orig @ x + c0), x, res, info)

    t_star = _phase_one(G, h, tol, run) if used.any() else max(
        float(np.linalg.eigvalsh(-hb)[-1]) for hb in h)
    info["phase_one"] = t_star
    if np.isfinite(t_star) and t_star > tol.certify:
        info["certificate"] = "phase one"
        return ConicSolution(INFEASIBLE, info=info)
    return ConicSolution(FAILED, info=info)
