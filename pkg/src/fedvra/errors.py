"""Error types shared across the package.

Invalid arguments raise plain ValueError. The classes below mark the
failure modes that callers (and the command line driver) treat
differently from bad input.
"""


class NumericalError(RuntimeError):
    """Raised when training or evaluation produces non-finite numbers."""


class StatisticalError(RuntimeError):
    """Raised when a resampling procedure cannot produce a defined result."""


class UndefinedMetricError(ValueError):
    """Raised when a metric is undefined for the given inputs (single-class AUC)."""


class SplitInvariantError(ValueError):
    """Raised when a split plan violates a leakage or partition invariant."""
