"""Shared exception types."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class AccuracyError(ArithmeticError):
    """An evaluation strategy could not certify the requested tolerance."""


class FormatError(RuntimeError):
    """A binary or text container failed structural validation."""
