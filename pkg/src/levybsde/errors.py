"""Exception types shared across the package."""


class LevyBsdeError(Exception):
    """Base class for all package errors."""


class DomainError(LevyBsdeError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class UnsupportedRepresentationError(LevyBsdeError, TypeError):
    """Operation requires a different jump-measure representation."""


class QuadratureError(LevyBsdeError, ArithmeticError):
    """Numerical integration failed or did not converge.

    Carries a ``diagnostics`` dict (shell sums, ratios, bounds) so callers
    can report why convergence was rejected.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DivergentMomentError(QuadratureError):
    """Moment integral diverges (exponential-moment hypothesis violated)."""


class DegenerateBasisError(LevyBsdeError, ValueError):
    """A required basis direction was pruned as degenerate."""


class CflError(LevyBsdeError, ValueError):
    """Explicit time step violates the stability bound.

    ``suggested_dt`` is the largest admissible step for the offending grid.
    """

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ConvergenceError(LevyBsdeError, RuntimeError):
    """Iterative scheme exhausted its iteration budget.

    ``trace`` holds the per-iteration residuals observed before giving up.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class ConfigError(LevyBsdeError, ValueError):
    """Run configuration failed schema validation."""
