"""Lane-level pavement performance prediction.

A multi-task LSTM predicts next-year PCI/PQI/RQI per 100 m lane unit from
segment-level history plus static road attributes. The package bundles the
numeric core, the model, training, data synthesis/preparation, evaluation,
and a CLI.
"""

from .errors import (
    CacheError,
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    LanePaveError,
)

__version__ = "0.1.0"

__all__ = [
    "CacheError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "DivergenceError",
    "LanePaveError",
    "__version__",
]
