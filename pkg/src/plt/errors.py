"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: parse errors exit with 2,
``DomainError`` subclasses with 3 and ``NumericalError`` subclasses with 4.
"""

from __future__ import annotations


class PltError(Exception):
    """Base class for library errors."""


class DimensionError(PltError, ValueError):
    """Matrix shapes are mutually inconsistent."""


class DomainError(PltError):
    """Input lies outside the domain of the requested operation."""


class NotStabilizingError(DomainError):
    """The closed loop (or a matrix required to be Hurwitz) is not stable."""


class InfiniteCostError(DomainError):
    """The LQG cost is infinite because the policy has a feedthrough term."""


class OrderError(DomainError):
    """The operation needs a full-order policy (q == n)."""


class IllConditionedError(DomainError):
    """A matrix that must be inverted is singular or too ill-conditioned."""


class UnstableAugmentationError(DomainError):
    """The block used to augment a policy is not Hurwitz."""


class FrequencyNotPeakError(DomainError):
    """A frequency passed as a subgradient generator does not attain the norm."""


class NumericalError(PltError):
    """A numerical kernel failed to converge or produced an unusable result."""


class EigenDecompositionError(NumericalError):
    """An eigenvalue computation did not converge."""


class BracketError(NumericalError):
    """A bisection bracket could not be initialised."""
