"""Exception types shared across the package."""


class PNPHError(Exception):
    """Base class for all package errors."""


class GeometryError(PNPHError, ValueError):
    """Invalid reference-cell description (empty phase, bad raster, ...)."""


class SolverError(PNPHError, RuntimeError):
    """A linear or nonlinear solve failed to converge.

    Attributes
    ----------
    residual : float or None
        Final (relative) residual when the failure happened.
    history : list of float
        Residual history, if the solver recorded one.
    """

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history or [])


class CompatibilityError(SolverError):
    """Right-hand side violates the solvability condition of a singular problem."""


class PhysicalRegimeError(PNPHError, RuntimeError):
    """The model left its range of validity (negative or depleted concentration)."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ConfigError(PNPHError, ValueError):
    """Malformed or inconsistent run configuration."""
