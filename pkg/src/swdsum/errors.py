"""Exception hierarchy shared across the package."""


class SwdError(Exception):
    """Base class for all package errors."""


class DimensionError(SwdError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ShapeError(DimensionError):
    """A tensor has the wrong rank or size for its role (e.g. non-scalar loss)."""


class DomainError(SwdError, ValueError):
    """A value lies outside an operation's mathematical domain."""


class DegenerateInputError(SwdError, ValueError):
    """Input is structurally empty where at least one element is required."""


class VocabularyError(SwdError, IndexError):
    """Token id outside the vocabulary range."""


class IngestionError(SwdError, ValueError):
    """Corpus text could not be turned into a usable document."""


class GenerationError(SwdError, ValueError):
    """A synthetic corpus specification cannot be satisfied."""


class DivergenceError(SwdError, FloatingPointError):
    """Training produced a non-finite loss or gradient."""


class FormatError(SwdError, ValueError):
    """A file on disk is malformed or inconsistent with its declared schema."""


class CompatibilityError(SwdError, ValueError):
    """Two artifacts (e.g. checkpoint and corpus vocabularies) do not match."""
