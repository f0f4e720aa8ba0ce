"""Exception classes shared across the package.

Each class maps to one failure mode named in the module contracts; the CLI
translates them into distinct exit codes.
"""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class GridMismatchError(DomainError):
    """Two fields do not live on the same torus."""


class EllipticityError(DomainError):
    """Contrast parameter violates the uniform ellipticity bound."""


class DegreeError(DomainError):
    """Hermite series degree too small for the requested tolerance."""


class SolverError(RuntimeError):
    """Iterative solver failed to converge.

    Carries the residual history so callers can inspect stagnation.
    """

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class QuadratureError(RuntimeError):
    """Numerical quadrature failed to reach its convergence target."""

    def __init__(self, message, last_values=None):
        super().__init__(message)
        self.last_values = tuple(last_values or ())


class FitError(RuntimeError):
    """Regression problem is ill-conditioned or underdetermined."""


class InconclusiveWitnessError(RuntimeError):
    """Witness search ended without a witness or a proportionality verdict."""


class ConfigError(ValueError):
    """Invalid CLI/config input; names the violated precondition."""
