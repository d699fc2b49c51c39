"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not agree."""


class ConfigurationError(ValueError):
    """A spec, config or argument violates a documented rule."""


class PredictionUndefinedError(ValueError):
    """The last window step is masked, so there is no output to read."""


class TrainingDivergedError(FloatingPointError):
    """Loss became NaN or infinite during training."""


class CheckpointError(ValueError):
    """A checkpoint file could not be loaded."""


class ParseError(ValueError):
    """Malformed CSV input."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UndefinedMetricError(ValueError):
    """A metric has no defined value for the given input (e.g. empty)."""
