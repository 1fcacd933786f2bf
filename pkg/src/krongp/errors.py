"""Exception hierarchy shared across the toolkit.

The CLI maps these onto stable exit codes (see ``krongp.cli``):
configuration errors exit 2, data/shape/parameter validation errors exit 3,
numerical failures exit 4, and I/O errors (plain ``OSError``) exit 5.
"""


class KronGPError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(KronGPError):
    """Invalid run configuration (unknown method, missing task name, ...)."""


class ShapeError(KronGPError):
    """Array dimensions inconsistent with what an operation requires."""


class ParameterError(KronGPError):
    """Non-finite or otherwise invalid model parameters."""


class DataError(KronGPError):
    """Malformed or invalid input data (parse failures, bad splits, ...)."""


class NumericalError(KronGPError):
    """A numerical operation failed (covariance not positive definite)."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class FitError(KronGPError):
    """Every optimization restart failed; carries per-restart diagnostics."""

    def __init__(self, message, restart_errors=()):
        super().__init__(message)
        self.restart_errors = list(restart_errors)
