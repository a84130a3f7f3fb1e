"""Exception hierarchy shared across the package."""


class MdpLabError(Exception):
    """Base class for all errors raised by mdplab."""


class InputError(MdpLabError, ValueError):
    """Malformed or inconsistent arguments (dimension mismatch, bad grid, ...)."""


class ConfigError(MdpLabError):
    """Configuration file could not be parsed or failed validation.

    ``violations`` carries every problem found, not just the first.
    """

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [message])


class ResourceError(MdpLabError):
    """A requested computation exceeds a configured memory/work budget."""


class SolverError(MdpLabError):
    """Numerical integration produced non-finite values."""


class ConvergenceError(MdpLabError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DegenerateEstimateError(MdpLabError):
    """A Monte Carlo estimator has no usable samples (e.g. zero hits)."""
