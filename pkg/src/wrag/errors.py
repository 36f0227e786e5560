"""Exception hierarchy shared by all wrag modules."""


class WragError(Exception):
    """Base class for all domain errors raised by this package."""


class ConfigError(WragError):
    """Configuration file missing, malformed, or out of range."""


class EmptyInputError(WragError):
    """Text input was empty (or tokenized to nothing)."""


class DimensionMismatchError(WragError):
    """Vector dimension does not match the configured embedding dimension."""


class DuplicateChunkError(WragError):
    """The same chunk_id appeared twice where uniqueness is required."""


class IntegrityError(WragError):
    """Cross-source consistency violation (signals an index build bug)."""


class InvalidHitError(WragError):
    """A scored hit carried a non-finite or negative distance."""


class CorruptIndexError(WragError):
    """Index file failed magic/version/checksum/length validation."""


class MissingIndexError(WragError):
    """Required index files are absent on disk."""


class UnknownProfileError(WragError):
    """A weight-profile id was requested that is not configured."""


class TransportError(WragError):
    """Remote provider unreachable after retries; retryable."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProviderFaultError(WragError):
    """Remote provider replied, but the reply violates its contract."""


class BatchItemError(WragError):
    """An element of a batch operation failed; carries the offending index."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"batch element {index} failed: {cause}")
        self.index = index
        self.cause = cause
