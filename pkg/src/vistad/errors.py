"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class MalformedInputError(PipelineError):
    """An input file could not be parsed; the message names the offending line."""


class SeriesTooShortError(PipelineError):
    """A series has fewer than two samples."""


class InvalidValueError(PipelineError):
    """An input contains NaN or infinite values."""


class InvalidArgumentError(PipelineError):
    """An argument violates an operation's precondition."""


class InsufficientWindowsError(PipelineError):
    """Cross-window scoring needs at least two windows."""


class TransportError(PipelineError):
    """A remote call failed after exhausting its retry budget."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries


class ProtocolError(PipelineError):
    """A remote reply violated the wire contract (wrong shape, bad payload)."""


class ConfigurationError(PipelineError):
    """Missing or inconsistent configuration (credentials, unknown keys)."""


class VerificationParseError(PipelineError):
    """The verifier's reply contained no parseable JSON verdict."""
