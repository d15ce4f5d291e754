"""Exception hierarchy shared by every diffcomp module."""

from typing import Any, Dict, Optional


class DiffcompError(Exception):
    """Base class for all diffcomp errors."""


class SpecificationError(DiffcompError):
    """Malformed model, payoff, plan or grid (shapes, dimensions, symmetry)."""


class HypothesisViolation(DiffcompError):
    """A sampled hypothesis check failed; `witness` records where."""

    def __init__(self, message: str, witness: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.witness = witness or {}


class MollificationError(DiffcompError):
    pass


class SimulationError(DiffcompError):
    pass


class GridError(DiffcompError):
    pass


class DegenerateDiffusionError(DiffcompError):
    pass


class SuiteError(DiffcompError):
    pass
