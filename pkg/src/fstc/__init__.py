"""Few-shot text classification by transfer learning plus meta-learning, built on numpy."""

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    FstcError,
    IngestionError,
    NumericError,
    SamplingError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "FstcError",
    "IngestionError",
    "NumericError",
    "SamplingError",
    "__version__",
]
