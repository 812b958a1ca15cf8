"""Error taxonomy shared across the pipeline.

Each CLI-visible failure maps onto one of these classes so exit codes and
machine-parsable error lines stay stable.
"""


class DqaError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    error_class = "internal"


class ConfigError(DqaError):
    """Bad or missing configuration value."""

    exit_code = 2
    error_class = "config"


class MissingArtifactError(DqaError):
    """A required input artifact (corpus, index, cluster model, ...) is absent."""

    exit_code = 3
    error_class = "missing_artifact"


class DataError(DqaError):
    """Malformed or inconsistent input data."""

    exit_code = 4
    error_class = "data"


class DuplicateIdError(DataError):
    error_class = "duplicate_id"


class DimensionMismatchError(DataError):
    error_class = "dimension_mismatch"


class DegenerateTextError(DataError):
    """Text whose embedding would be the zero vector (cosine undefined)."""

    error_class = "degenerate_text"


class RemoteProviderError(DqaError):
    """Remote backend failure; carries the provider status for retry decisions."""

    exit_code = 5
    error_class = "remote_provider"

    def __init__(self, message: str, status: int | None = None, retryable: bool = True):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


class SessionConflictError(DqaError):
    """Concurrent or post-termination turn on a dialogue session."""

    exit_code = 5
    error_class = "session_conflict"
