"""Exception types shared across the package."""


class MechlabError(Exception):
    """Base class for all package errors."""


class DomainError(MechlabError, ValueError):
    """An argument lies outside the domain of the operation."""


class CapacityError(MechlabError):
    """A brute-force routine was asked to go beyond its size limit."""

    def __init__(self, what: str, size: int, limit: int):
        super().__init__(f"{what}: size {size} exceeds limit {limit}")
        self.what = what
        self.size = size
        self.limit = limit


class UnsupportedError(MechlabError):
    """The operation is not defined for this kind of input."""
