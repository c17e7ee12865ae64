"""Document-image translation: synthetic data generation, U-Net word
detection, region cropping, pluggable recognition, and a from-scratch
multilingual seq2seq translator with its evaluation metrics."""

from .errors import (
    ConfigError,
    DataFormatError,
    EngineError,
    StageError,
    TrainingDivergedError,
)

__all__ = [
    "ConfigError",
    "DataFormatError",
    "EngineError",
    "StageError",
    "TrainingDivergedError",
]

__version__ = "0.1.0"
