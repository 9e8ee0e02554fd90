"""Exception types shared across the package.

ValidationError covers bad inputs (files, shapes, domains); NumericalError
covers runtime linear-algebra failures. The CLI maps them to exit codes 2
and 3 respectively.
"""


class CondSpecError(Exception):
    """Base class for all package errors."""


class ValidationError(CondSpecError):
    """Input fails a precondition: bad file, shape mismatch, out-of-domain value."""


class NumericalError(CondSpecError):
    """A numerical operation failed (singular matrix, non-PD input, overflow)."""


class ConvergenceError(NumericalError):
    """Iterative optimisation did not converge; carries the iteration trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
