"""Exception types shared across the package."""

from __future__ import annotations


class GpqeError(Exception):
    """Base class for errors raised by this package."""


class DataError(GpqeError):
    """A data file could not be parsed or its parts are inconsistent.

    Carries enough location information (path, 1-based line and column)
    to point at the offending token.
    """

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        loc = ""
        if path is not None:
            loc = str(path)
            if line is not None:
                loc += f":{line}"
                if column is not None:
                    loc += f":{column}"
            loc = f" [{loc}]"
        super().__init__(message + loc)


class DomainError(GpqeError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConvergenceError(GpqeError, ArithmeticError):
    """An iterative solver ran out of iterations.

    ``best`` holds the last iterate and ``residual`` the remaining error,
    so callers can decide whether the partial answer is still usable.
    """

    def __init__(self, message, best=None, residual=None):
        self.best = best
        self.residual = residual
        super().__init__(message)


class IllConditionedError(GpqeError, ArithmeticError):
    """A covariance matrix stayed indefinite after all jitter escalations."""


class OptimizationError(GpqeError, RuntimeError):
    """Every optimizer restart failed numerically.

    ``diagnostics`` lists one message per failed restart.
    """

    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message)


class SupportViolationError(GpqeError, ValueError):
    """A predictive density assigned zero mass to an observed label."""

    def __init__(self, message, indices=()):
        self.indices = list(indices)
        super().__init__(message)


class UndefinedCorrelationError(GpqeError, ValueError):
    """Pearson correlation is undefined (a vector has zero variance)."""


class LossOverflowError(GpqeError, OverflowError):
    """An exponential loss would overflow for the given weight and errors."""

    def __init__(self, message, weight=None, max_exponent=None, indices=()):
        self.weight = weight
        self.max_exponent = max_exponent
        self.indices = list(indices)
        super().__init__(message)


class ExperimentError(GpqeError, RuntimeError):
    """Too many cross-validation folds failed; the experiment is unusable.

    The partially filled report is attached so callers can still inspect
    or persist whatever did run.
    """

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)
