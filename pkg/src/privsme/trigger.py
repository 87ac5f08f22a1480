"""Dynamic event-triggered transmission scheduler, one instance per sensor.

A sensor transmits its residual when theta * l > delta, where l compares the
gap since the last transmission against the last transmitted residual. The
auxiliary variable follows delta' = rho * delta - l; on transmission steps the
post-transmission value of l (zero gap) is used, which keeps delta >= 0.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class TriggerParams:
    sigma: float
    rho: float
    theta: float
    delta0: float

    def __post_init__(self):
        if not 0.0 <= self.sigma < 1.0:
            raise ValueError(f"sigma must lie in [0, 1), got {self.sigma}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.theta >= 1.0 / self.rho:
            raise ValueError(f"theta must be >= 1/rho = {1.0 / self.rho}, got {self.theta}")
        if not self.delta0 >= 0.0:
            raise ValueError("delta0 must be nonnegative")


@dataclass(frozen=True)
class TriggerState:
    delta: float
    last_tx_residual: np.ndarray
    last_tx_time: Optional[int] = None

    @classmethod
    def initial(cls, params, n_y):
        return cls(float(params.delta0), np.zeros(n_y), None)


def _quad(v, Psi):
    return float(v @ Psi @ v)


def event_function(h, y_last, Psi, sigma):
    """h' Psi h - sigma * y_last' Psi y_last."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    y_last = np.atleast_1d(np.asarray(y_last, dtype=float))
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    if h.shape != y_last.shape or Psi.shape != (h.size, h.size):
        raise DimensionMismatch("residual and weight dimensions disagree")
    return _quad(h, Psi) - sigma * _quad(y_last, Psi)


@dataclass(frozen=True)
class TriggerOutcome:
    fired: bool
    state: TriggerState
    l_pre: float
    l_used: float


def trigger_step(state, params, y_now, Psi, k=None):
    """Run the trigger test for one sensor at time ``k``.

    Equality theta * l == delta does not fire.
    """
    y_now = np.atleast_1d(np.asarray(y_now, dtype=float))
    h = y_now - state.last_tx_residual
    l_pre = event_function(h, state.last_tx_residual, Psi, params.sigma)
    fired = params.theta * l_pre > state.delta
    if fired:
        l_used = event_function(np.zeros_like(y_now), y_now, Psi, params.sigma)
        new = TriggerState(params.rho * state.delta - l_used, y_now.copy(), k)
    else:
        l_used = l_pre
        new = replace(state, delta=params.rho * state.delta - l_used)
    return TriggerOutcome(bool(fired), new, l_pre, l_used)
