"""Exception types shared across the solver."""


class AwgmError(Exception):
    """Base class for all solver errors."""


class MeshError(AwgmError):
    """Invalid mesh operation (mismatched domains, bad cell ids)."""


class DegenerateBoundaryError(MeshError):
    """Boundary restriction requested on a 1D domain, whose boundary is two points."""


class NonTreeError(AwgmError):
    """An index set that must be a tree (parent-closed, coarsest level included) is not."""


class QuadratureCapacityError(AwgmError):
    """An integrand exceeds the polynomial degree the configured rule integrates exactly."""


class OscillationBudgetError(AwgmError):
    """Greedy data-oscillation refinement hit the level cap before meeting its budget."""


class CapExceededError(AwgmError):
    """A dense-assembly or level cap was exceeded."""


class SingularBlockError(AwgmError):
    """A Galerkin block that must be SPD has a non-positive Ritz value."""


class StagnationError(AwgmError):
    """The residual loop or the inexact Galerkin solve failed to reach its tolerance."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []


class ConfigError(AwgmError):
    """Malformed or inconsistent run configuration."""
