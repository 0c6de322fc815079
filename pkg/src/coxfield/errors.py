"""Exception hierarchy for coxfield.

Every error raised deliberately by the package derives from
``CoxFieldError``. The CLI maps the classes onto exit codes:
configuration and data errors exit with 1, numeric failures with 2.
"""
from __future__ import annotations


class CoxFieldError(Exception):
    """Base class for all coxfield errors."""

    exit_code: int = 1


class ConfigurationError(CoxFieldError, ValueError):
    """Invalid run configuration or invalid arguments to an operation."""


class ModelConfigurationError(ConfigurationError):
    """Kernel, marks and edge mode do not fit together."""


class DataError(CoxFieldError, ValueError):
    """Malformed input data (pattern or chain files, points outside W)."""

    def __init__(self, message: str, *, path: str | None = None,
                 line: int | None = None, index: int | None = None):
        self.path = path
        self.line = line
        self.index = index
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericError(CoxFieldError, ArithmeticError):
    """Factorisation failure, non-finite objective or quadrature."""

    exit_code = 2


class StaleFieldError(CoxFieldError, RuntimeError):
    """An influence field was used for parameters it was not computed for."""
