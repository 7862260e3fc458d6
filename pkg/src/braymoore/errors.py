"""Exception types shared across the package."""


class BrayMooreError(Exception):
    """Base class for library errors."""


class InvalidInputError(BrayMooreError, ValueError):
    """Malformed or out-of-domain arguments (non-finite data, bad shapes)."""


class DomainError(BrayMooreError, ValueError):
    """Input outside the mathematical domain of a formula."""


class PreconditionError(BrayMooreError):
    """A documented precondition of a checker or identity does not hold."""


class ConvergenceError(BrayMooreError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class AccuracyError(BrayMooreError):
    """A quadrature missed its error target; ``estimate`` holds its best value."""

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class SolverError(BrayMooreError):
    """A root bracket could not be established."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateError(BrayMooreError):
    """The point is degenerate (v = 0 or a vanishing correction argument).

    This is a signal rather than a numerical failure: the conditioned Hessian
    is singular with probability one at such points.
    """


class IdentityViolation(BrayMooreError):
    """An algebraic identity that must hold exactly failed numerically."""
