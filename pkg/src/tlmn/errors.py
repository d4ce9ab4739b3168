"""Exception hierarchy shared across the package."""


class TLMNError(Exception):
    """Base class for every error raised by this package."""


class DomainError(TLMNError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(TLMNError, ValueError):
    """Array shapes do not agree with the model or operation contract."""


class DataError(TLMNError, ValueError):
    """Input records violate a data contract (gaps, ordering, alignment)."""


class ConfigError(TLMNError, ValueError):
    """Configuration is invalid or internally inconsistent."""


class StateError(TLMNError, RuntimeError):
    """An object was used in a state that does not permit the operation."""


class TrainingError(TLMNError, RuntimeError):
    """Training hit a non-finite loss or gradient."""


class CheckpointError(TLMNError, ValueError):
    """A checkpoint file could not be decoded."""


class ParseError(TLMNError, ValueError):
    """A data file could not be parsed."""


class FetchError(TLMNError, RuntimeError):
    """A remote download failed and no cached copy was available."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class IntegrityError(FetchError):
    """A downloaded payload is incomplete or malformed."""


class EvaluationError(TLMNError, ValueError):
    """A metric is undefined for the given records."""
