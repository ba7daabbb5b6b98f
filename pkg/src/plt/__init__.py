"""Policy optimization tools for LQG and H-infinity output-feedback control."""

from .errors import (
    DomainError,
    FrequencyNotPeakError,
    IllConditionedError,
    InfiniteCostError,
    NotStabilizingError,
    NumericalError,
    OrderError,
    PltError,
)
from .statespace import ClosedLoop, Plant, Policy, assemble_closed_loop

__version__ = "0.1.0"

__all__ = [
    "ClosedLoop",
    "DomainError",
    "FrequencyNotPeakError",
    "IllConditionedError",
    "InfiniteCostError",
    "NotStabilizingError",
    "NumericalError",
    "OrderError",
    "Plant",
    "Policy",
    "PltError",
    "assemble_closed_loop",
    "__version__",
]
