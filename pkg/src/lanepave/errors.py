"""Exception types shared across the package."""


class LanePaveError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(LanePaveError, ValueError):
    """Invalid architecture, training, or run configuration."""


class DimensionError(LanePaveError, ValueError):
    """Tensor shapes violate an operation's contract."""


class CacheError(LanePaveError, ValueError):
    """Backward pass given a cache that does not match its forward pass."""


class DataError(LanePaveError, ValueError):
    """Input data violates the declared schema or value ranges."""


class DivergenceError(LanePaveError, ArithmeticError):
    """Non-finite value encountered during training or evaluation.

    May carry a ``log`` attribute with the partial training log
    accumulated before the abort.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log
