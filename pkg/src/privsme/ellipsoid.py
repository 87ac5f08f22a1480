"""Ellipsoidal sets {x : (x - c)' P^-1 (x - c) <= beta} and their Cholesky factors."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric

SYMMETRY_RTOL = 1e-12
PIVOT_FLOOR = 1e-12
CONTAINS_SLACK = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def check_symmetric(P, rtol=SYMMETRY_RTOL):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {P.shape}")
    scale = max(np.max(np.abs(P)), 1.0) if P.size else 1.0
    if np.max(np.abs(P - P.T), initial=0.0) > rtol * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    return P


@dataclass(frozen=True)
class LowerTriangularFactor:
    """Lower-triangular L with positive diagonal such that L @ L.T is the source matrix."""

    L: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        if L.shape[0] != L.shape[1]:
            raise DimensionMismatch("factor must be square")
        if np.any(np.triu(L, 1) != 0.0):
            raise ValueError("factor must be lower triangular")
        if np.any(np.diag(L) <= 0.0):
            raise NotPositiveDefinite("factor diagonal must be strictly positive")
        object.__setattr__(self, "L", _frozen(L))

    def product(self):
        return self.L @ self.L.T

    def solve(self, b):
        """Return L^-1 b by forward substitution."""
        return solve_triangular(self.L, b, lower=True)


def cholesky_lower(P):
    """Cholesky factor of a symmetric positive-definite matrix.

    Raises NotSymmetric if P is not symmetric to 1e-12 relative and
    NotPositiveDefinite when any pivot (squared diagonal of the factor)
    falls to 1e-12 or below.
    """
    P = check_symmetric(P)
    if P.shape[0] < 1:
        raise DimensionMismatch("empty matrix")
    P = 0.5 * (P + P.T)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(L) ** 2
    if np.any(pivots <= PIVOT_FLOOR):
        raise NotPositiveDefinite(f"collapsed pivot {pivots.min():.3e}")
    return LowerTriangularFactor(L)


@dataclass(frozen=True)
class Ellipsoid:
    """The set of x with (x - center)' shape^-1 (x - center) <= scale.

    ``scale`` is kept separate from ``shape`` because the estimator keeps a
    fixed per-sensor level while the shape matrix is redesigned each step.
    A zero scale is the degenerate single-point set.
    """

    center: np.ndarray
    shape: np.ndarray
    scale: float = 1.0
    factor: LowerTriangularFactor = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        P = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if c.ndim != 1 or P.shape != (c.size, c.size):
            raise DimensionMismatch(f"center {c.shape} incompatible with shape {P.shape}")
        if not self.scale >= 0.0:
            raise ValueError("scale must be nonnegative")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "shape", _frozen(P))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "factor", cholesky_lower(P))

    @property
    def dim(self):
        return self.center.size

    def mahalanobis_sq(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != self.center.shape:
            raise DimensionMismatch(f"point has shape {x.shape}, expected {self.center.shape}")
        z = self.factor.solve(x - self.center)
        return float(z @ z)


def contains(E, x):
    """Membership test with a 1e-9 relative slack on the level."""
    return E.mahalanobis_sq(x) <= E.scale * (1.0 + CONTAINS_SLACK)


def sample_uniform(E, rng):
    """Draw one point uniformly from the solid ellipsoid."""
    n = E.dim
    if E.scale == 0.0:
        return np.array(E.center)
    d = rng.standard_normal(n)
    d /= np.linalg.norm(d)
    r = rng.random() ** (1.0 / n)
    return E.center + np.sqrt(E.scale) * (E.factor.L @ (r * d))


def sample_boundary(E, rng):
    """Draw one point uniformly in direction on the ellipsoid surface."""
    n = E.dim
    if E.scale == 0.0:
        return np.array(E.center)
    d = rng.standard_normal(n)
    d /= np.linalg.norm(d)
    return E.center + np.sqrt(E.scale) * (E.factor.L @ d)
