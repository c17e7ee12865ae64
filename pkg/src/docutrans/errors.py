"""Exception types shared across the pipeline stages."""


class ConfigError(ValueError):
    """A configuration object violates its invariants."""


class DataFormatError(ValueError):
    """An input file does not match the expected schema."""


class EngineError(RuntimeError):
    """The external recognition engine is missing or failed; carries its diagnostic."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class StageError(RuntimeError):
    """A pipeline stage failed; `stage` names it, `partial` holds upstream results."""

    def __init__(self, stage: str, message: str, partial=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.partial = partial
