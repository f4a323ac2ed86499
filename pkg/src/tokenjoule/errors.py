"""Exception hierarchy shared by all tokenjoule modules."""

from __future__ import annotations


class TokenjouleError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(TokenjouleError):
    """Invalid or incomplete configuration."""


class ParseError(TokenjouleError):
    """A file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IntegrityError(TokenjouleError):
    """Stored checksum does not match the content."""


class SamplerError(TokenjouleError):
    """The power sampler could not be started or failed while running."""


class InsufficientDataError(TokenjouleError):
    """Not enough samples or runs to compute the requested quantity."""


class GapError(TokenjouleError):
    """A power trace has a hole wider than the tolerated gap."""


class EmptyTraceError(TokenjouleError):
    """A trace slice selected no samples."""


class DomainError(TokenjouleError, ValueError):
    """An argument lies outside the domain of a formula."""


class CatalogError(TokenjouleError):
    """Unknown GPU or malformed catalog entry."""


class DegenerateRunError(TokenjouleError):
    """A run cannot be normalised (for example it produced zero tokens)."""


class DataError(TokenjouleError):
    """A record lacks a field required for the computation."""


class PersistenceError(TokenjouleError):
    """Run logs would be overwritten or cannot be resumed."""
