"""Exception types raised across the package."""


class DsparseError(Exception):
    """Base class for all package errors."""


class ZeroColumn(DsparseError, ValueError):
    def __init__(self, column):
        super().__init__(f"column {column} is identically zero")
        self.column = column


class InvalidBudget(DsparseError, ValueError):
    pass


class DimensionMismatch(DsparseError, ValueError):
    pass


class StructureMismatch(DsparseError, ValueError):
    pass


class InvalidSchedule(DsparseError, ValueError):
    pass


class NonFiniteIterate(DsparseError, FloatingPointError):
    pass


class SingularGram(DsparseError, ValueError):
    pass


class SupportMismatch(DsparseError, ValueError):
    pass


class InvalidRegime(DsparseError, ValueError):
    pass


class TooLarge(DsparseError, ValueError):
    """Support enumeration exceeds the configured cap; use the Monte-Carlo estimate."""
