"""Exception types shared across the package."""


class FieldLearnError(Exception):
    """Base class for all package errors."""


class ShapeError(FieldLearnError, ValueError):
    """Dimensions of operands do not agree."""


class CapabilityError(FieldLearnError):
    """A requested derivative order exceeds what the engine or activation supports."""


class DomainError(FieldLearnError, ValueError):
    """An argument lies outside the domain of an operation."""


class ParseError(FieldLearnError, ValueError):
    """Malformed operator expression."""


class ConfigError(FieldLearnError, ValueError):
    """Invalid configuration values."""


class DataError(FieldLearnError, ValueError):
    """Malformed or non-finite dataset contents."""


class TrainingAborted(FieldLearnError, RuntimeError):
    """Training produced a non-finite loss."""
