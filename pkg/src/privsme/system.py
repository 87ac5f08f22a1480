"""Time-varying plant with Laplace privacy masking and ellipsoidal process noise.

The plant is

    zeta_k  = x_k + eta_k
    x_{k+1} = C_k zeta_k + F_k w_k

where eta_k is coordinatewise Laplace noise with scale b_k and w_k lies in
the process-noise ellipsoid {w : w' R^-1 w <= 1}.
"""

from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional

import numpy as np

from .ellipsoid import Ellipsoid, contains
from .errors import DimensionMismatch, NoiseOutOfBound


@dataclass(frozen=True)
class MatrixSchedule:
    """A pure map from the time index k to a matrix of fixed shape."""

    generator: Callable[[int], np.ndarray]
    shape: tuple

    def __call__(self, k):
        M = np.atleast_2d(np.asarray(self.generator(int(k)), dtype=float))
        if M.shape != tuple(self.shape):
            raise DimensionMismatch(f"schedule produced {M.shape} at k={k}, expected {self.shape}")
        return M

    @classmethod
    def constant(cls, M):
        M = np.atleast_2d(np.asarray(M, dtype=float)).copy()
        M.setflags(write=False)
        return cls(partial(_constant, M), M.shape)


def _constant(M, k):
    return M


@dataclass(frozen=True)
class PrivacyNoiseParams:
    """Laplace scale schedule.

    ``mode="decaying"`` gives b_k = c q^k with c > 0 and 0 < q < 1;
    ``mode="constant"`` gives b_k = b for every k.
    """

    mode: str = "decaying"
    c: float = 1.0
    q: float = 0.5
    b: float = 1.0

    def __post_init__(self):
        if self.mode == "decaying":
            if not self.c > 0.0:
                raise ValueError("privacy noise scale c must be positive")
            if not 0.0 < self.q < 1.0:
                raise ValueError("privacy decay rate q must lie in (0, 1)")
        elif self.mode == "constant":
            if not self.b > 0.0:
                raise ValueError("constant Laplace scale b must be positive")
        else:
            raise ValueError(f"unknown privacy noise mode {self.mode!r}")

    @classmethod
    def decaying(cls, c, q):
        return cls(mode="decaying", c=float(c), q=float(q))

    @classmethod
    def constant_scale(cls, b):
        return cls(mode="constant", b=float(b))


def laplace_scale(p, k):
    if k < 0:
        raise ValueError("time index must be nonnegative")
    if p.mode == "constant":
        return p.b
    return p.c * p.q**k


def privacy_second_moment(p, k):
    """Per-coordinate second moment 2 b_k^2 of the Laplace noise."""
    return 2.0 * laplace_scale(p, k) ** 2


def laplace_from_uniform(u, b):
    """Inverse-CDF map of u in (0, 1) to a Laplace(0, b) variate."""
    u = np.asarray(u, dtype=float)
    t = u - 0.5
    # u == 0 exactly would give log(0)
    arg = np.maximum(1.0 - 2.0 * np.abs(t), np.finfo(float).tiny)
    x = -b * np.sign(t) * np.log(arg)
    return float(x) if x.ndim == 0 else x


def sample_laplace(b, rng, size=None):
    if not b > 0.0:
        raise ValueError("Laplace scale must be positive")
    return laplace_from_uniform(rng.random(size), b)


def sample_privacy_noise(p, k, n, rng, kappa=None, max_tries=10_000):
    """Draw eta_k in R^n with i.i.d. Laplace(b_k) coordinates.

    With ``kappa`` set, draws are rejected until eta' eta / (2 b_k^2) <= kappa,
    which is the bounded-confidence set the gain design assumes.
    """
    b = laplace_scale(p, k)
    if kappa is None:
        return sample_laplace(b, rng, size=n)
    limit = kappa * 2.0 * b * b
    for _ in range(max_tries):
        eta = sample_laplace(b, rng, size=n)
        if eta @ eta <= limit:
            return eta
    raise RuntimeError("privacy noise rejection sampling did not terminate")


@dataclass(frozen=True)
class PlantParams:
    C: MatrixSchedule
    F: MatrixSchedule
    process_noise: Ellipsoid
    privacy: PrivacyNoiseParams
    x0: np.ndarray

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        n_x = x0.size
        if tuple(self.C.shape) != (n_x, n_x):
            raise DimensionMismatch("C schedule must be n_x by n_x")
        if self.F.shape[0] != n_x or self.F.shape[1] != self.process_noise.dim:
            raise DimensionMismatch("F schedule must be n_x by n_w")
        object.__setattr__(self, "x0", x0)

    @property
    def n_x(self):
        return self.x0.size

    @property
    def n_w(self):
        return self.process_noise.dim


def privacy_masked(x, eta):
    return np.asarray(x, dtype=float) + np.asarray(eta, dtype=float)


def step_plant(params, x, k, eta, w):
    """Advance the true state one step: C_k (x + eta) + F_k w."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if x.shape != (params.n_x,) or eta.shape != x.shape:
        raise DimensionMismatch("state and privacy noise must have length n_x")
    if w.shape != (params.n_w,):
        raise DimensionMismatch("process noise must have length n_w")
    if not contains(params.process_noise, w):
        raise NoiseOutOfBound(f"process noise {w} outside its ellipsoid at k={k}")
    return params.C(k) @ privacy_masked(x, eta) + params.F(k) @ w


def ship_matrices(k):
    """Periodic speed/resistance dynamics; sin takes the integer k in radians."""
    s = np.sin(k)
    C = np.array([[0.9653, -0.0021], [-0.054, 0.7654 + 0.2 * s]])
    F = np.array([[0.22 + 0.22 * s], [0.22]])
    return C, F


def _ship_C(k):
    return ship_matrices(k)[0]


def _ship_F(k):
    return ship_matrices(k)[1]


def ship_plant(x0=(1.7, 3.7), R=0.4, privacy=None):
    C = MatrixSchedule(_ship_C, (2, 2))
    F = MatrixSchedule(_ship_F, (2, 1))
    noise = Ellipsoid(np.zeros(1), np.atleast_2d(R), 1.0)
    if privacy is None:
        privacy = PrivacyNoiseParams.constant_scale(1.0)
    return PlantParams(C, F, noise, privacy, np.asarray(x0, dtype=float))
