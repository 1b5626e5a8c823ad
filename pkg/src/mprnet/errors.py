"""Exception hierarchy shared by the library and the CLI."""

from typing import Dict, List, Optional


class MPRNetError(Exception):
    """Base class for every error raised by this package."""
    pass


class DimensionError(MPRNetError, ValueError):
    """Raised when tensor shapes or spatial sizes are incompatible."""
    pass


class UsageError(MPRNetError, ValueError):
    """Raised when an operation is called outside its contract."""
    pass


class ConfigError(MPRNetError):
    """Raised when a run configuration cannot be parsed or validated."""

    def __init__(self, message: str, errors: Optional[List[str]] = None, key: Optional[str] = None):
        super().__init__(message)
        self.errors = errors or [message]
        self.key = key


class CheckpointError(MPRNetError):
    """Raised when a checkpoint file is corrupt or incompatible."""
    pass


class NonFiniteLossError(MPRNetError):
    """Raised when training produces a NaN or infinite loss."""

    def __init__(self, iteration: int, terms: Dict[str, float]):
        formatted = ", ".join(f"{k}={v}" for k, v in terms.items())
        super().__init__(f"Non-finite loss at iteration {iteration}: {formatted}")
        self.iteration = iteration
        self.terms = terms
