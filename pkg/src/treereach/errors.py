"""Exception types shared across the package."""

from __future__ import annotations


class ReachError(Exception):
    """Base class for all package errors."""


class InputError(ReachError, ValueError):
    """Malformed arguments: dimension mismatches, unknown names, bad shapes."""


class CapabilityError(ReachError, NotImplementedError):
    """Requested operation is not supported for this dimension or model."""


class ConfigError(ReachError, ValueError):
    """Invalid configuration file or CFL violation detected before stepping."""


class NumericError(ReachError, ArithmeticError):
    """Non-finite values produced while integrating or propagating.

    ``context`` carries whatever locates the failure (level, node index, step).
    """

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


class DegenerateHullError(ReachError):
    """Point cloud has affine dimension lower than the ambient dimension."""


class ConsistencyError(ReachError, RuntimeError):
    """An internal invariant was violated (e.g. a node with no reachable parent)."""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


class CapacityError(ReachError, MemoryError):
    """A tree level exceeded the configured node cap."""
