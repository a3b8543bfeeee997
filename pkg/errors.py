"""
Exception hierarchy for the FSI-HDG solver.

Library code raises these; the CLI catches FsiHdgError, logs it and exits
with a nonzero status.
"""
from typing import List, Optional, Sequence


class FsiHdgError(Exception):
    """Base class for every error raised by the solver."""


class GeometryError(FsiHdgError):
    """Rectangles do not form a conforming two-region layout."""


class ClassificationError(FsiHdgError):
    """Boundary predicates do not partition the exterior boundary."""

    def __init__(self, message: str, facets: Sequence[int] = ()):
        super().__init__(message)
        self.facets = list(facets)


class ConfigError(FsiHdgError):
    """Invalid case configuration; carries every violation found."""

    def __init__(self, errors: Sequence[str]):
        self.errors: List[str] = list(errors)
        super().__init__("; ".join(self.errors))


class AssemblyError(FsiHdgError):
    """Degenerate element, non-unisolvent basis or singular constrained block."""


class CondensationError(FsiHdgError):
    """Local interior block could not be factorized."""


class FactorizationError(FsiHdgError):
    """Sparse factorization failed or found a non-positive pivot."""


class SolverError(FsiHdgError):
    """Krylov solver did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float, history: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history or [])


class StepError(FsiHdgError):
    """A time step failed; wraps the underlying solver error."""

    def __init__(self, step: int, cause: FsiHdgError):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step
        self.cause = cause
