"""Exception and warning types shared across the package."""


class QbragError(Exception):
    """Base class for all package errors."""


# -- vector math ------------------------------------------------------------


class ZeroVectorError(QbragError, ValueError):
    """Raised when a vector with (near-)zero norm cannot be normalized."""


class NonFiniteError(QbragError, ValueError):
    """Raised when an input contains NaN or infinite entries."""


class DimensionMismatchError(QbragError, ValueError):
    """Raised when operand dimensions are incompatible."""


class KTooLargeError(QbragError, ValueError):
    """Raised when a top-k request exceeds (or undercuts) the candidate pool."""


# -- knowledge base ---------------------------------------------------------


class EmptyTextError(QbragError, ValueError):
    """Raised when a content or question text is empty."""


class UnknownContentError(QbragError, KeyError):
    """Raised when a referenced content id does not exist."""


class TargetTooHighError(QbragError, ValueError):
    """Raised when a downsampling target exceeds the current coverage."""


class StoreIoError(QbragError, OSError):
    """Raised when a persistence directory cannot be read or written."""


class FormatError(QbragError, ValueError):
    """Raised on malformed persisted data; carries the offending file."""

    def __init__(self, message, filename=None, line=None):
        detail = message
        if filename is not None:
            detail = f"{filename}: {detail}"
        if line is not None:
            detail = f"{detail} (line {line})"
        super().__init__(detail)
        self.filename = filename
        self.line = line


class ChecksumMismatchError(FormatError):
    """Raised when a binary payload fails its CRC32 check."""


# -- clients ----------------------------------------------------------------


class ClientError(QbragError):
    """Base class for model-client failures."""


class TransportError(ClientError):
    """A single request attempt failed at the transport level."""


class RetryExhaustedError(ClientError):
    """All retry attempts failed."""


class BackendRefusedError(ClientError):
    """The backend returned a non-retryable refusal (e.g. HTTP 4xx)."""


class EmptyInputError(ClientError, ValueError):
    """Raised when a client operation receives no inputs."""


# -- pipeline / evaluation --------------------------------------------------


class ParseFailureError(QbragError, ValueError):
    """Model output could not be parsed into the expected structure."""


class GenerationFailedError(QbragError):
    """A generation call failed; wraps the underlying client error."""


class InsufficientQuestionsError(QbragError, ValueError):
    """A content has too few questions to sample preference candidates."""


class EmbeddingsMissingError(QbragError, RuntimeError):
    """An operation needed embeddings that have not been built yet."""


class NoObservationsError(QbragError, ValueError):
    """Matrix completion was invoked without any observed entries."""


class RankTooLargeError(QbragError, ValueError):
    """Completion rank exceeds the smaller matrix dimension."""


class MatrixMissingError(QbragError, RuntimeError):
    """A retriever required an answerability matrix that is not available."""


class CaseResultMismatchError(QbragError, ValueError):
    """Test cases and retrieval results do not line up one-to-one."""


class ConfigError(QbragError, ValueError):
    """Invalid run or strategy configuration."""


# -- warnings ---------------------------------------------------------------


class CoverageWarning(UserWarning):
    """Some contents no longer have any answerable question."""


class RephraseCollisionWarning(UserWarning):
    """A rephrased test question duplicated a stored question and was dropped."""
