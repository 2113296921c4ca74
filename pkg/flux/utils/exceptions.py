"""
Custom exceptions for the flux package.

Every error raised by flux derives from FluxError so callers (the CLI, the API
blueprint) can map failures to exit codes and JSON payloads in one place.
"""


class FluxError(Exception):
    """Base exception for the flux package."""

    def __init__(self, message: str, details: dict = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)


class ValidationError(FluxError):
    """Input validation errors (bad configs, masks, arguments)."""

    pass


class ShapeError(ValidationError):
    """Tensor shapes that do not conform to an operation's rule."""

    def __init__(self, op: str, left, right, message: str = None):
        left, right = tuple(left), tuple(right)
        super().__init__(
            message or f"{op}: incompatible shapes {left} and {right}",
            {"op": op, "left": list(left), "right": list(right)},
        )


class ConfigurationError(FluxError):
    """Configuration-related errors (unknown keys, conflicting flags, missing paths)."""

    pass


class NumericalError(FluxError):
    """Non-finite values where finite ones are required."""

    pass


class TrainingError(FluxError):
    """Training aborted; details carry the last good checkpoint path."""

    pass


class SearchError(FluxError):
    """Token Optimization search failed; details carry the partial plan."""

    def __init__(self, message: str, plan=None, details: dict = None):
        self.plan = plan
        super().__init__(message, details)
