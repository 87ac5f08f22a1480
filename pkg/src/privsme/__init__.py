"""Privacy-preserving distributed set-membership estimation with dynamic
event-triggered communication."""

from .analysis import SteadyStateReport, lyapunov_step, privacy_epsilon, solve_steady_state
from .config import ScenarioConfig, config_from_dict, load_config
from .ellipsoid import Ellipsoid, contains
from .errors import (
    BudgetUndefined, ConfigError, DimensionMismatch, Infeasible, NoiseOutOfBound,
    NotPositiveDefinite, NotSymmetric, PrivSmeError, SolverFailure,
)
from .estimator import EstimatorState, GainSolution, StepContext, design_gains
from .simulation import SimulationLog, metrics, run_batch, run_simulation, write_csvs

__version__ = "0.1.0"
