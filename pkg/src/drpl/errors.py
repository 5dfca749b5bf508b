"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes do not line up."""


class ParameterError(ValueError):
    """A scalar hyperparameter is outside its valid range."""


class ValidationError(ValueError):
    """An input object violates its structural invariants."""


class NonFiniteGradientError(FloatingPointError):
    """A backward pass produced NaN or inf."""


class InsufficientCleanSetError(RuntimeError):
    """Too few samples were selected as clean to continue training."""


class DatasetFormatError(ValueError):
    """An on-disk dataset is missing files or has inconsistent payloads."""
