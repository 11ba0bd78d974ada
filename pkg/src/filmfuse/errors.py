class FilmError(Exception):
    """Base class for filmfuse errors."""


class ContractError(FilmError, ValueError):
    """An argument violates a documented precondition."""


class FormatError(FilmError):
    """A file or payload does not follow the expected layout."""


class NumericFault(FilmError, ArithmeticError):
    """Non-finite values appeared in activations or losses."""


class UnsupportedTaskError(FilmError):
    """The requested task has no training configuration."""


class ServiceError(FilmError):
    """A remote caption/LLM call failed; safe to retry."""


class PipelineError(FilmError):
    """A dataset pipeline stage failed after all retries."""

    def __init__(self, stage, message):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
