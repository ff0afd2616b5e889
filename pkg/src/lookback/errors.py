"""Exception hierarchy shared across the package.

Backend errors split into retryable transport failures and non-retryable
protocol/data failures; the CLI maps top-level classes to exit codes.
"""

from __future__ import annotations


class LookbackError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LookbackError):
    """Invalid configuration value or unusable run setup."""


class PreconditionError(LookbackError):
    """An operation was called with arguments violating its contract."""


class EmptyInputError(LookbackError):
    """An aggregate operation received no records."""


class InsufficientDataError(LookbackError):
    """Too few records to estimate data-driven thresholds."""


class UndefinedRateError(LookbackError):
    """A rate statistic has an empty denominator (e.g. empty vocabulary)."""


class CoverageError(LookbackError):
    """Two record sets do not cover the same question ids."""

    def __init__(self, message: str, missing_ours=(), missing_original=()):
        super().__init__(message)
        self.missing_ours = tuple(missing_ours)
        self.missing_original = tuple(missing_original)


class ManifestError(LookbackError):
    """A resume manifest failed its integrity check; refusing to resume silently."""


class BackendError(LookbackError):
    """Base class for backend/transport failures."""


class TransportError(BackendError):
    """Network-level failure. Retryable; carries the attempt count."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProtocolViolationError(BackendError):
    """The server answered outside the wire contract (e.g. wrong token count).

    Never retried: it indicates a misconfigured server, not a flaky network.
    """


class DataIntegrityError(LookbackError):
    """Structurally or numerically bad data, from a server or a file."""


class StreamInterruptedError(BackendError):
    """A generation stream died mid-flight; carries the tokens received so far."""

    def __init__(self, message: str, partial=()):
        super().__init__(message)
        self.partial = tuple(partial)
