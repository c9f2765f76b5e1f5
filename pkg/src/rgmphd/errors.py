"""Exception types raised across the package."""

from __future__ import annotations


class TrackingError(Exception):
    """Base class for all errors raised by rgmphd."""


class SingularCovariance(TrackingError):
    def __init__(self, eigenvalue: float, message: str | None = None):
        self.eigenvalue = float(eigenvalue)
        super().__init__(message or f"covariance is not positive definite (min eigenvalue {self.eigenvalue:.3e})")


class NotPositiveDefinite(SingularCovariance):
    pass


class SingularInnovation(TrackingError):
    def __init__(self, index: int, eigenvalue: float = float("nan")):
        self.index = int(index)
        self.eigenvalue = float(eigenvalue)
        super().__init__(f"innovation covariance of component {self.index} is singular "
                         f"(min eigenvalue {self.eigenvalue:.3e})")


class InvalidDof(TrackingError, ValueError):
    pass


class DegenerateGeometry(TrackingError):
    pass


class TooLarge(TrackingError, ValueError):
    pass


class EmptyInput(TrackingError, ValueError):
    pass


class ParseError(TrackingError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ValidationError(TrackingError, ValueError):
    def __init__(self, key: str, constraint: str):
        self.key = key
        self.constraint = constraint
        super().__init__(f"invalid value for {key!r}: must satisfy {constraint}")
