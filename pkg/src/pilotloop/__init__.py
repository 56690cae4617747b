"""pilotloop: two-loop adaptive flight-control simulation.

An inner-loop adaptive controller keeps an uncertain plant on a reference
model while an outer-loop adaptive pilot model, acting through an internal
time delay with saturated commands, steers the plant toward a
crossover-style reference. The package ships the 747 longitudinal case
study, a delay/learning-rate sweep harness, diagnostics oracles, and a CLI.
"""

from .design import GainSet, compute_Lr, compute_theta_r, design_crossover, solve_matching
from .diagnostics import RunMetrics, TransitionOracle, compute_metrics, ideal_values, predict_state
from .engine import run_simulation
from .errors import (
    DimensionMismatch,
    EmptyWindow,
    NoConvergence,
    NonFiniteState,
    NotHurwitz,
    NotStabilizable,
    OutOfBounds,
    ParseError,
    PilotloopError,
    RangeNotLogged,
    SingularDCGain,
    StepTooLarge,
    ValidationError,
)
from .history import HistoryBuffer
from .inner_loop import InnerLoopState, PlantParams
from .linalg import eigenvalues, matrix_exponential, solve_care, solve_lyapunov
from .pilot_model import OuterLoopState, PilotCommand
from .projection import ProjectionBounds, proj
from .scenario import (
    FailureEvent,
    ReferenceSignal,
    ScenarioConfig,
    builtin_747,
    load_config,
    save_config,
)
from .simlog import SimLog
from .sweep import sweep, variant_config, write_sweep_csv

__version__ = "0.1.0"
