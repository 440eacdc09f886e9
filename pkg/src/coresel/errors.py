"""Exception taxonomy shared across the package.

The classes are grouped so the command-line layer can map them onto exit
codes without inspecting messages: ``FormatError`` covers unreadable files,
``DataError`` covers well-formed files whose *content* violates a contract,
and ``ConstraintError`` covers bad arguments to library calls.
"""


class CoreselError(Exception):
    """Base class for all package-specific errors."""


class FormatError(CoreselError):
    """A file could not be parsed at the byte/structure level."""


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class DataError(CoreselError):
    """Parsed content violates a documented invariant."""


class NonFiniteEntry(DataError):
    """A NaN or infinity appeared where only finite reals are allowed."""

    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"non-finite entry in row {row}")


class ZeroVectorRow(DataError):
    """An all-zero embedding row cannot be normalized."""

    def __init__(self, row: int):
        self.row = row
        super().__init__(f"zero vector in row {row}")


class SimplexViolation(DataError):
    """A probability vector has negative mass or does not sum to one."""

    def __init__(self, row: int | None = None, message: str | None = None):
        self.row = row
        where = "probability vector" if row is None else f"probability row {row}"
        super().__init__(message or f"{where} is not on the simplex")


class SchemaViolation(DataError):
    pass


class MissingLabels(DataError):
    pass


class DegenerateDataset(DataError):
    pass


class ConstraintError(CoreselError):
    """A library call was made with arguments outside its contract."""


class DimensionMismatch(ConstraintError):
    pass


class ZeroVector(ConstraintError):
    pass


class KTooLarge(ConstraintError):
    pass


class QueryNotInSubset(ConstraintError):
    pass


class EmptyIndex(ConstraintError):
    pass


class BudgetExceedsItems(ConstraintError):
    pass


class DegenerateDistance(ConstraintError):
    """An averaged neighbor distance fell below the configured epsilon."""
