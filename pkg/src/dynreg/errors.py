"""Exception hierarchy shared across the package."""


class DynRegError(Exception):
    """Base class for all errors raised by dynreg."""


class InvalidParameterError(DynRegError, ValueError):
    pass


class InvalidInputError(DynRegError, ValueError):
    pass


class EmptyIndexError(DynRegError):
    pass


class RegistrationError(DynRegError):
    """Raised when a scan matcher cannot produce a pose."""


class DegenerateInputError(RegistrationError):
    pass


class NoOverlapError(RegistrationError):
    pass


class NumericalFailureError(RegistrationError):
    pass


class FormatError(DynRegError, ValueError):
    """Malformed file contents. ``position`` is a 1-based line or byte offset."""

    def __init__(self, message: str, path=None, position: int | None = None):
        parts = []
        if path is not None:
            parts.append(str(path))
        if position is not None:
            parts.append(str(position))
        prefix = ":".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.position = position
