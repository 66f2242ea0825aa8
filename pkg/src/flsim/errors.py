"""Exception hierarchy shared by every flsim module."""


class FLSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(FLSimError, ValueError):
    """Invalid configuration, shape mismatch or impossible request."""


class UsageError(FLSimError, ValueError):
    """API misuse such as aggregating an empty list."""


class NumericalError(FLSimError, ArithmeticError):
    """A non-finite value appeared during training."""

    def __init__(self, message, round_index=None):
        self.round_index = round_index
        if round_index is not None:
            message = f"round {round_index}: {message}"
        super().__init__(message)


class FormatError(FLSimError, ValueError):
    """Malformed IDX file."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class InsufficientHistory(FLSimError):
    """LEGATO needs at least two logged rounds to compute robustness factors."""
