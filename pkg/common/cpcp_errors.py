#!/usr/bin/env python3
"""
CPCP Errors - Shared exception types for the compressive PCP toolkit.

Every named failure of the library maps to one class here so the CLI can
translate them into exit codes (precondition refusals exit with 2).
"""


class CPCPError(Exception):
    """Base class for all toolkit errors."""


class InvalidDimensionError(CPCPError, ValueError):
    """Matrix sizes or ranks outside their allowed range."""


class InvalidParameterError(CPCPError, ValueError):
    """A scalar parameter (probability, tolerance, weight) is out of range."""


class DimensionMismatchError(CPCPError, ValueError):
    """Operands do not share the dimensions an operation needs."""


class GramSingularError(CPCPError):
    """Measurement Gram matrix is not positive definite to tolerance."""


class NoConvergenceError(CPCPError):
    """An iterative estimator hit its iteration cap."""


class AngleTooLargeError(CPCPError):
    """Subspaces are too aligned for the requested series to converge."""


class NeumannDivergenceError(CPCPError):
    """A truncated Neumann series still had a large term at the cap."""


class PartitionError(CPCPError):
    """The golfing Bernoulli partition parameter fell outside (0, 1)."""


class InsufficientMeasurementsError(CPCPError):
    """Too few measurements to form the requested golfing blocks."""


class SVDFailureError(CPCPError):
    """The singular value decomposition did not converge."""


class MemoryCapExceededError(CPCPError):
    """A sweep would need more ensemble storage than the configured cap."""
