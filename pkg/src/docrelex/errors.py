"""Exception types shared across the package."""


class DocRelexError(Exception):
    """Base class for all package errors."""


class ShapeError(DocRelexError):
    """Tensor shapes or axes are incompatible with an operation."""


class DomainError(DocRelexError):
    """Numeric input outside an operation's domain (e.g. log of non-positive)."""


class ConfigError(DocRelexError):
    """Invalid model or training configuration."""


class DataError(DocRelexError):
    """Malformed or inconsistent corpus data."""


class TrainingDivergedError(DocRelexError):
    """Training produced a non-finite loss."""
