"""Exception types shared by the solvers and the command-line runner."""


class SparseGameError(Exception):
    """Base class for all package errors."""


class ConfigError(SparseGameError, ValueError):
    """Malformed or out-of-range experiment configuration."""


class InfeasibleError(SparseGameError, ArithmeticError):
    """A decay recursion left its admissible range (non-positive denominator),
    or the smallness condition failed in strict mode."""


class SolverBlowUp(SparseGameError, FloatingPointError):
    """A Riccati or flow integration left the monotone regime."""


class ConvergenceError(SparseGameError, RuntimeError):
    """An iterative solver did not reach its tolerance.

    ``history`` holds the residuals observed, most recent last.
    """

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)
