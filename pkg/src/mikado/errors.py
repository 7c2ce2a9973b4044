"""Exception hierarchy shared by the package.

The CLI maps :class:`ValidationError` (and subclasses) to exit code 1 and
:class:`IngestionError` / ``OSError`` to exit code 2.
"""


class TrackingError(Exception):
    """Base class for all package errors."""


class ValidationError(TrackingError, ValueError):
    """Input is well-formed but violates a data or configuration invariant."""


class DomainError(ValidationError):
    """A computation was requested outside its mathematical domain."""


class GeometryError(ValidationError):
    """A point does not lie on the surface it is attributed to."""


class IngestionError(TrackingError):
    """A file is missing or cannot be parsed."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")
