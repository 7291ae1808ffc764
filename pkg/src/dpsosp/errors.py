"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
first token of its one-line error message so callers can dispatch on it.
"""

from __future__ import annotations


class DpsospError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class InputError(DpsospError, ValueError):
    """An argument violates a documented precondition."""

    category = "input"


class OracleError(DpsospError):
    """An oracle returned a non-finite value."""

    category = "oracle"

    def __init__(self, message: str, probe=None):
        super().__init__(message)
        self.probe = probe


class ResolutionError(DpsospError):
    """The noise-plan resolver did not converge."""

    category = "resolution"

    def __init__(self, message: str, last_iterate: dict | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate or {}


class BudgetError(DpsospError):
    """The privacy budget is outside the range the calibration covers."""

    category = "budget"


class DivergenceError(DpsospError):
    """An iterate became non-finite."""

    category = "divergence"

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class PreconditionError(DpsospError):
    """An analysis routine was called on an input it is not defined for."""

    category = "precondition"


class ParseError(DpsospError):
    """A config file could not be parsed."""

    category = "parse"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TraceFormatError(DpsospError):
    """A trace file is malformed."""

    category = "format"

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row
