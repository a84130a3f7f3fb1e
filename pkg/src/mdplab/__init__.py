"""Numerical laboratory for moderate deviations of SPDEs with Poisson jumps."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, DegenerateEstimateError, InputError,
                     MdpLabError, ResourceError, SolverError)
from .model import AssumptionReport, CheckRecord, ModelSpec, verify_assumptions
from .noise import (Control, DeviationScale, JumpCoefficient, MarkSpace, PointProcessSample, Tilt,
                    check_admissible, girsanov_log_weight, q_functional, sample_controlled_prm,
                    sample_prm)
from .rate import EndpointRateResult, ball_rate, endpoint_rate, optimal_tilt
from .solvers import (LinearizedFlow, Trajectory, evolve_controlled_moderate, evolve_deterministic,
                      evolve_stochastic, linearized_adjoint_solve, solve_skeleton)
from .streams import stream
from .timegrid import TimeGrid

__all__ = [
    "AssumptionReport", "CheckRecord", "ConfigError", "Control", "ConvergenceError",
    "DegenerateEstimateError", "DeviationScale", "EndpointRateResult", "InputError",
    "JumpCoefficient", "LinearizedFlow", "MarkSpace", "MdpLabError", "ModelSpec",
    "PointProcessSample", "ResourceError", "SolverError", "Tilt", "TimeGrid", "Trajectory",
    "ball_rate", "check_admissible", "endpoint_rate", "evolve_controlled_moderate",
    "evolve_deterministic", "evolve_stochastic", "girsanov_log_weight",
    "linearized_adjoint_solve", "optimal_tilt", "q_functional", "sample_controlled_prm",
    "sample_prm", "solve_skeleton", "stream", "verify_assumptions",
]
