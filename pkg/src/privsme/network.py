"""Directed sensor topology, measurement model and adjacency of initial states."""

from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .ellipsoid import Ellipsoid, contains
from .errors import DimensionMismatch, NoiseOutOfBound
from .system import MatrixSchedule


@dataclass(frozen=True)
class Topology:
    """Weighted digraph; row i of ``adjacency`` lists the nodes i listens to.

    Self-loops are dropped unless ``include_self`` is set, in which case
    every node hears its own residual with weight a_ii (1 if the given
    diagonal entry is zero).
    """

    adjacency: np.ndarray
    include_self: bool = False
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.adjacency, dtype=float))
        if A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise DimensionMismatch("adjacency must be a nonempty square matrix")
        if np.any(A < 0.0) or not np.all(np.isfinite(A)):
            raise ValueError("adjacency weights must be finite and nonnegative")
        A = A.copy()
        A.setflags(write=False)
        W = A.copy()
        if self.include_self:
            d = np.diag(W).copy()
            d[d == 0.0] = 1.0
            np.fill_diagonal(W, d)
        else:
            np.fill_diagonal(W, 0.0)
        W.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "weights", W)

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    def neighbors(self, i):
        return [j for j in range(self.n_nodes) if self.weights[i, j] > 0.0]

    def neighbor_lists(self):
        return [self.neighbors(i) for i in range(self.n_nodes)]

    @classmethod
    def from_edges(cls, n_nodes, edges, include_self=False):
        """Build from (i, j) pairs meaning node i receives from node j."""
        A = np.zeros((n_nodes, n_nodes))
        for i, j in edges:
            A[i, j] = 1.0
        return cls(A, include_self=include_self)


def ring_with_chord(n_nodes=5, chord=(0, 2), include_self=False):
    """Directed ring i <- i-1 plus one extra edge; a stand-in layout for examples."""
    edges = [(i, (i - 1) % n_nodes) for i in range(n_nodes)]
    edges.append(tuple(chord))
    return Topology.from_edges(n_nodes, edges, include_self=include_self)


@dataclass(frozen=True)
class SensorParams:
    H: MatrixSchedule
    D: MatrixSchedule
    measurement_noise: Ellipsoid

    def __post_init__(self):
        if self.H.shape[0] != self.D.shape[0]:
            raise DimensionMismatch("H and D must have the same number of rows")
        if self.D.shape[1] != self.measurement_noise.dim:
            raise DimensionMismatch("D columns must match the noise dimension")

    @property
    def n_y(self):
        return self.H.shape[0]

    @property
    def n_v(self):
        return self.measurement_noise.dim


def measure(s, k, x, v):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    H = s.H(k)
    if x.shape != (H.shape[1],) or v.shape != (s.n_v,):
        raise DimensionMismatch("state or noise length does not match the sensor")
    if not contains(s.measurement_noise, v):
        raise NoiseOutOfBound(f"measurement noise {v} outside its ellipsoid at k={k}")
    return H @ x + s.D(k) @ v


def residual(s, k, y, xhat):
    """Innovation y - H_k xhat of one sensor."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    xhat = np.atleast_1d(np.asarray(xhat, dtype=float))
    H = s.H(k)
    if y.shape != (H.shape[0],) or xhat.shape != (H.shape[1],):
        raise DimensionMismatch("measurement or estimate length does not match the sensor")
    return y - H @ xhat


def is_adjacent(x1, x2, i0, varsigma):
    """True when two per-node initial states differ by at most varsigma at
    node ``i0`` (componentwise) and agree exactly everywhere else."""
    if not varsigma > 0.0:
        raise ValueError("varsigma must be positive")
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape:
        return False
    x1 = x1.reshape(x1.shape[0], -1)
    x2 = x2.reshape(x2.shape[0], -1)
    others = np.arange(x1.shape[0]) != i0
    if not np.array_equal(x1[others], x2[others]):
        return False
    return bool(np.all(np.abs(x1[i0] - x2[i0]) <= varsigma))


def _ship_H(i, k):
    return np.array([[0.0, 1.1 + 0.11 * (i + 1) - 0.11 * np.sin(k)]])


def ship_sensor(i, Q=0.2):
    """Sensor ``i`` (1-based) of the ship example."""
    H = partial(_ship_H, i)
    D = MatrixSchedule.constant([[1.0 / (i + 1)]])
    noise = Ellipsoid(np.zeros(1), np.atleast_2d(Q), 1.0)
    return SensorParams(MatrixSchedule(H, (1, 2)), D, noise)
