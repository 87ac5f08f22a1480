"""Distributed event-triggered set-membership estimator.

Each sensor i keeps an ellipsoid {x : (x - xhat_i)' U_i^-1 (x - xhat_i) <= beta_i}
and predicts

    xhat_i' = Ahat_i xhat_i + Bhat_i * sum_j a_ij * ytilde_j

from the latest residuals its neighbours have transmitted. The gains, the
next shape matrices U_i' and the trigger weights Psi_i are designed jointly
at every step from one LMI

    [ -U'    Phi ]
    [ Phi'   Lam ]  <= 0

whose feasibility (through an S-procedure over the bounded noises and the
trigger condition) guarantees sum_i e_i' U_i'^-1 e_i <= sum_i beta_i for the
next-step errors e_i.

Column partition of Phi and Lam: [1, alpha, w, eta, v, h] where alpha
stacks the normalised per-sensor errors, w and eta the per-sensor copies of
the process and privacy noise, v the measurement noises and h the gaps
between the current and the last transmitted residuals.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import sdp
from .ellipsoid import Ellipsoid, cholesky_lower
from .errors import DimensionMismatch, Infeasible, SolverFailure
from .sdp import AffineMatrix, bmat, block_diag

BOUNDED_PRIVACY = "bounded_privacy"
PAPER_LITERAL = "paper_literal"
SIGN_MODES = (BOUNDED_PRIVACY, PAPER_LITERAL)

MU = 1e-8
VERIFY_TOL = 1e-6


@dataclass(frozen=True)
class EstimatorState:
    xhat: List[np.ndarray]
    U: List[np.ndarray]
    beta: np.ndarray
    L: List[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        xhat = [np.atleast_1d(np.asarray(x, dtype=float)) for x in self.xhat]
        U = [np.atleast_2d(np.asarray(u, dtype=float)) for u in self.U]
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if not (len(xhat) == len(U) == beta.size):
            raise DimensionMismatch("xhat, U and beta must have one entry per sensor")
        if np.any(beta <= 0.0):
            raise ValueError("beta must be positive")
        object.__setattr__(self, "xhat", xhat)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "beta", beta)
        if self.L is None:
            object.__setattr__(self, "L", [cholesky_lower(u).L for u in U])

    @property
    def n_sensors(self):
        return len(self.xhat)

    def ellipsoid(self, i):
        return Ellipsoid(self.xhat[i], self.U[i], self.beta[i])


@dataclass(frozen=True)
class GainSolution:
    A_hat: List[np.ndarray]
    B_hat: List[np.ndarray]
    Psi: List[np.ndarray]
    U_next: List[np.ndarray]
    eps: np.ndarray
    objective: float = float("nan")
    residual: float = float("nan")
    info: dict = field(default_factory=dict, compare=False)

    @property
    def trace_U_next(self):
        return float(sum(np.trace(u) for u in self.U_next))


@dataclass(frozen=True)
class StepContext:
    """Everything the step-k LMI depends on, already evaluated at k.

    ``second_moment`` is the per-coordinate Laplace second moment 2 b_k^2.
    ``weights`` is the effective adjacency (self-loops already resolved).
    """

    k: int
    C: np.ndarray
    F: np.ndarray
    H: Sequence[np.ndarray]
    D: Sequence[np.ndarray]
    R: np.ndarray
    Q: Sequence[np.ndarray]
    second_moment: float
    xhat: Sequence[np.ndarray]
    L: Sequence[np.ndarray]
    beta: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray
    weights: np.ndarray
    kappa: float = 9.0
    sign_mode: str = BOUNDED_PRIVACY

    def __post_init__(self):
        if self.sign_mode not in SIGN_MODES:
            raise ValueError(f"sign_mode must be one of {SIGN_MODES}")
        n_y = {np.shape(h)[0] for h in self.H}
        if len(n_y) != 1:
            raise DimensionMismatch("all sensors must share the residual dimension")

    @property
    def N(self):
        return len(self.xhat)

    @property
    def n_x(self):
        return self.C.shape[0]

    @property
    def n_w(self):
        return self.F.shape[1]

    @property
    def n_y(self):
        return np.shape(self.H[0])[0]

    @property
    def n_v(self):
        return [np.shape(d)[1] for d in self.D]

    def block_dims(self):
        N, n_x = self.N, self.n_x
        return [1, N * n_x, N * self.n_w, N * n_x, sum(self.n_v), N * self.n_y]


@dataclass
class StackedLmi:
    Phi: object
    Lambda: object
    U_next: object
    dims: list

    def matrix(self):
        rows = self.U_next.shape[0]
        cols = sum(self.dims)
        return bmat([[-self.U_next, self.Phi], [self.Phi.T, self.Lambda]], [rows, cols], [rows, cols])


class _Stacks:
    """Constant stacked operators of one step."""

    def __init__(self, ctx):
        N, n_x, n_y = ctx.N, ctx.n_x, ctx.n_y
        I_N = np.eye(N)
        self.C = np.kron(I_N, ctx.C)
        self.F = np.kron(I_N, ctx.F)
        self.H = block_diag([np.atleast_2d(h) for h in ctx.H])
        self.D = block_diag([np.atleast_2d(d) for d in ctx.D])
        self.L = block_diag([np.atleast_2d(l) for l in ctx.L])
        sq = np.sqrt(ctx.beta)
        self.beta_x = np.kron(np.diag(sq), np.eye(n_x))
        self.beta_y = np.kron(np.diag(sq), np.eye(n_y))
        self.A = np.kron(ctx.weights, np.eye(n_y))
        self.theta_sigma = np.kron(np.diag(ctx.theta * ctx.sigma), np.eye(n_y))
        self.theta_1m_sigma = np.kron(np.diag(ctx.theta * (ctx.sigma - 1.0)), np.eye(n_y))
        self.R_inv = np.kron(I_N, np.linalg.inv(np.atleast_2d(ctx.R)))
        self.Q_inv = block_diag([np.linalg.inv(np.atleast_2d(q)) for q in ctx.Q])
        self.M_inv = np.eye(N * n_x) / ctx.second_moment


def _smul(e, M):
    """Scalar (number or 1x1 affine) times a constant matrix."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if isinstance(e, AffineMatrix):
        return AffineMatrix(e.coef[:, 0, 0][:, None, None] * M[None])
    return float(e) * M


def _vstack(blocks):
    cols = (blocks[0].shape if isinstance(blocks[0], AffineMatrix) else np.shape(blocks[0]))[1]
    rows = [b.shape[0] if isinstance(b, AffineMatrix) else np.shape(b)[0] for b in blocks]
    return bmat([[b] for b in blocks], rows, [cols])


def assemble_phi(ctx, A_hat, B_hat, stacks=None):
    """Phi = [(C-Ahat)xhat, beta C L - Bhat A beta H L, F, C, -Bhat A D, Bhat A].

    ``A_hat``/``B_hat`` are per-sensor lists of arrays or affine expressions.
    """
    st = stacks or _Stacks(ctx)
    first = _vstack([(ctx.C - A_hat[i]) @ np.reshape(ctx.xhat[i], (-1, 1)) for i in range(ctx.N)])
    BA = block_diag([b if isinstance(b, AffineMatrix) else np.atleast_2d(b) for b in B_hat]) @ st.A
    alpha = st.beta_x @ st.C @ st.L - BA @ (st.beta_y @ st.H @ st.L)
    blocks = [first, alpha, st.F, st.C, -(BA @ st.D), BA]
    return bmat([blocks], [ctx.N * ctx.n_x], ctx.block_dims())


def assemble_lambda(ctx, Psi, eps, stacks=None):
    """The 6x6 block matrix Lam; ``eps`` holds the four S-procedure multipliers."""
    st = stacks or _Stacks(ctx)
    N = ctx.N
    dims = ctx.block_dims()
    e1, e2, e3, e4 = eps
    Psi_t = block_diag([p if isinstance(p, AffineMatrix) else np.atleast_2d(p) for p in Psi])
    G = st.theta_sigma @ Psi_t
    HL = st.beta_y @ st.H @ st.L

    l11 = -np.sum(ctx.beta) + np.sum(ctx.delta) + _smul(e1, [[N]]) + _smul(e3, [[N]]) + _smul(e4, [[N]])
    if ctx.sign_mode == BOUNDED_PRIVACY:
        l11 = l11 + _smul(e2, [[ctx.kappa * N]])
        l44 = -_smul(e2, st.M_inv)
    else:
        l44 = _smul(e2, st.M_inv)
    l22 = -_smul(e4, np.eye(dims[1])) + HL.T @ G @ HL
    l25 = HL.T @ G @ st.D
    l26 = -(HL.T @ G)
    l33 = -_smul(e1, st.R_inv)
    l55 = -_smul(e3, st.Q_inv) + st.D.T @ G @ st.D
    l56 = -(st.D.T @ G)
    l66 = st.theta_1m_sigma @ Psi_t

    grid = [[None] * 6 for _ in range(6)]
    grid[0][0] = l11
    grid[1][1] = l22
    grid[1][4], grid[4][1] = l25, l25.T
    grid[1][5], grid[5][1] = l26, l26.T
    grid[2][2] = l33
    grid[3][3] = l44
    grid[4][4] = l55
    grid[4][5], grid[5][4] = l56, l56.T
    grid[5][5] = l66
    return bmat(grid, dims, dims)


def assemble_lmi(ctx, A_hat, B_hat, Psi, U_next, eps):
    st = _Stacks(ctx)
    Phi = assemble_phi(ctx, A_hat, B_hat, st)
    Lam = assemble_lambda(ctx, Psi, eps, st)
    U_t = block_diag([u if isinstance(u, AffineMatrix) else np.atleast_2d(u) for u in U_next])
    return StackedLmi(Phi, Lam, U_t, ctx.block_dims())


def _has_neighbors(ctx, i):
    return bool(np.any(ctx.weights[i] > 0.0))


def psi_floor(ctx, i, mu=MU):
    """Lower bound on Psi_i, measured in the units it enters the LMI.

    Psi_i appears in the alpha block through theta sigma beta (H L)'(H L), so
    a fixed floor would cost an amount that grows with U_i. Dividing by that
    gain caps the floor's cost at mu.
    """
    HL = np.atleast_2d(ctx.H[i]) @ np.atleast_2d(ctx.L[i])
    gain = ctx.theta[i] * ctx.sigma[i] * ctx.beta[i] * float(np.linalg.norm(HL, 2)) ** 2
    return mu / (1.0 + gain)


def build_problem(ctx, objective="trace", mu=MU):
    """Declare the decision variables and the block LMI for step ``ctx.k``.

    Ahat_i only enters through Ahat_i xhat_i, so the solver works with the
    offset d_i = (C - Ahat_i) xhat_i and Ahat_i is recovered as the matrix
    closest to C_k with that offset.
    """
    N, n_x, n_y = ctx.N, ctx.n_x, ctx.n_y
    var = []
    for i in range(N):
        var.append(sdp.Variable(f"U{i}", sdp.SYMMETRIC, (n_x, n_x), lower=mu))
    for i in range(N):
        var.append(sdp.Variable(f"Psi{i}", sdp.SYMMETRIC, (n_y, n_y), lower=psi_floor(ctx, i, mu)))
    for i in range(N):
        if np.linalg.norm(ctx.xhat[i]) > 0.0:
            var.append(sdp.Variable(f"d{i}", sdp.MATRIX, (n_x, 1)))
        if _has_neighbors(ctx, i):
            var.append(sdp.Variable(f"B{i}", sdp.MATRIX, (n_x, n_y)))
    for m in range(1, 5):
        var.append(sdp.Variable(f"eps{m}", sdp.SCALAR, lower=mu))
    prob = sdp.ConicProblem(var)
    names = set(prob.offsets)

    A_hat, B_hat = [], []
    for i in range(N):
        x = np.reshape(ctx.xhat[i], (-1, 1))
        if f"d{i}" in names:
            A_hat.append(ctx.C - prob.var(f"d{i}") @ (x.T / float(x.ravel() @ x.ravel())))
        else:
            A_hat.append(np.array(ctx.C))
        B_hat.append(prob.var(f"B{i}") if f"B{i}" in names else np.zeros((n_x, n_y)))
    Psi = [prob.var(f"Psi{i}") for i in range(N)]
    U = [prob.var(f"U{i}") for i in range(N)]
    eps = [prob.var(f"eps{m}") for m in range(1, 5)]

    lmi = assemble_lmi(ctx, A_hat, B_hat, Psi, U, eps)
    prob.set_constraint(lmi.matrix())
    if objective == "trace":
        obj = U[0].trace()
        for u in U[1:]:
            obj = obj + u.trace()
        prob.set_objective(obj)
    elif objective == "feasibility":
        prob.set_objective(None)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return prob, lmi


def extract_gains(ctx, values):
    N, n_x, n_y = ctx.N, ctx.n_x, ctx.n_y
    A_hat, B_hat = [], []
    for i in range(N):
        x = np.reshape(ctx.xhat[i], (-1, 1))
        if f"d{i}" in values:
            A_hat.append(ctx.C - values[f"d{i}"] @ (x.T / float(x.ravel() @ x.ravel())))
        else:
            A_hat.append(np.array(ctx.C))
        B_hat.append(np.array(values.get(f"B{i}", np.zeros((n_x, n_y)))))
    Psi = [values[f"Psi{i}"] for i in range(N)]
    U = [values[f"U{i}"] for i in range(N)]
    eps = np.array([values[f"eps{m}"] for m in range(1, 5)])
    return A_hat, B_hat, Psi, U, eps


def verify_lmi(solution, ctx):
    """lambda_max of the block LMI re-assembled from numeric gains."""
    lmi = assemble_lmi(ctx, solution.A_hat, solution.B_hat, solution.Psi, solution.U_next, solution.eps)
    return lmi_residual(lmi.matrix())


def lmi_residual(M):
    M = np.asarray(M, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def preconditioner(ctx):
    """Rescale U_i' by the current factor L_i (U' is close to U step to step)
    and apply the matching congruence to the U rows of the LMI."""
    N, n_x = ctx.N, ctx.n_x
    dims = ctx.block_dims()
    T = np.eye(N * n_x + sum(dims))
    scales = {}
    for i in range(N):
        L = np.atleast_2d(ctx.L[i])
        sl = slice(i * n_x, (i + 1) * n_x)
        T[sl, sl] = np.linalg.inv(L).T
        scales[f"U{i}"] = L
    return sdp.Preconditioner(T, scales)


def design_gains(ctx, objective="trace", mu=MU, tol=None, backend="native"):
    """Solve the step LMI, minimising trace(U') by default.

    Raises Infeasible when the backend proves infeasibility and
    SolverFailure when it does not converge or the result fails
    re-verification at 1e-6.
    """
    prob, _ = build_problem(ctx, objective, mu)
    sol = sdp.solve(prob, tol, preconditioner(ctx), backend)
    diag = {"k": ctx.k, "sign_mode": ctx.sign_mode, **sol.info}
    if sol.status == sdp.INFEASIBLE:
        raise Infeasible(f"gain design LMI infeasible at step {ctx.k}", ctx.k, diag)
    if sol.status != sdp.OPTIMAL:
        raise SolverFailure(f"gain design did not converge at step {ctx.k}", ctx.k, diag)
    A_hat, B_hat, Psi, U, eps = extract_gains(ctx, sol.assignment)
    gains = GainSolution(A_hat, B_hat, Psi, U, eps, sol.objective_value, float("nan"), diag)
    res = verify_lmi(gains, ctx)
    if res > VERIFY_TOL:
        raise SolverFailure(f"solution failed re-verification at step {ctx.k}: {res:.3e}", ctx.k, diag)
    return GainSolution(A_hat, B_hat, Psi, U, eps, sol.objective_value, res, diag)


def predict(est, gains, weights, last_residuals):
    """One-step prediction of every sensor's estimate.

    ``last_residuals[j]`` is the most recent residual sensor j transmitted.
    """
    weights = np.asarray(weights, dtype=float)
    N = est.n_sensors
    if weights.shape != (N, N) or len(last_residuals) != N:
        raise DimensionMismatch("topology size does not match the estimator")
    out = []
    for i in range(N):
        innov = sum(weights[i, j] * np.asarray(last_residuals[j], dtype=float) for j in range(N))
        out.append(gains.A_hat[i] @ est.xhat[i] + gains.B_hat[i] @ np.atleast_1d(innov))
    return out


def update_confidence(est, gains, weights, last_residuals):
    """Next estimator state; beta is carried over unchanged."""
    xhat = predict(est, gains, weights, last_residuals)
    U = [0.5 * (u + u.T) for u in gains.U_next]
    L = [cholesky_lower(u).L for u in U]
    return EstimatorState(xhat, U, est.beta, L)
