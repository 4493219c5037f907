"""Exception taxonomy shared across the package."""


class StructgamError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateDataError(StructgamError):
    """Covariate has too few distinct values to support the requested basis."""


class ExtrapolationError(StructgamError):
    """Evaluation requested outside the knot range of a non-cyclic basis."""


class DimensionError(StructgamError):
    """Shape mismatch between paired arrays or matrix columns."""


class IdentifiabilityError(StructgamError):
    """A term's design is rank deficient after constraints."""


class ValidationError(StructgamError):
    """Invalid value or option (bad by-column, duplicate labels, ...)."""


class FormulaSyntaxError(StructgamError):
    """Formula text failed to parse.

    Carries the byte offset of the offending token and the set of token
    kinds that would have been accepted there.
    """

    def __init__(self, message, position, expected=()):
        super().__init__(f"syntax error at offset {position}: {message}")
        self.position = position
        self.expected = tuple(expected)


class ResolutionError(StructgamError):
    """Formula resolved against a schema it does not fit."""


class IngestError(StructgamError):
    """CSV/schema ingestion failure (unparseable cell, ragged matrix, ...)."""


class FitError(StructgamError):
    """Numerical failure during model fitting."""


class LagSpacingWarning(UserWarning):
    """Lag matrix steps are not equal; penalty geometry assumes they are."""
