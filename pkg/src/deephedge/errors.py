"""Exception types shared across the engine."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NonFiniteError(ArithmeticError):
    """A forward value or adjoint became NaN or infinite."""


class EpisodeFailure(RuntimeError):
    """A hedging episode produced a non-finite quantity at a given step."""

    def __init__(self, step, reason):
        super().__init__(f"episode failed at step {step}: {reason}")
        self.step = step
        self.reason = reason


class MissingCheckpointError(FileNotFoundError):
    """An experiment needs a checkpoint that was not supplied."""


class TrainingFailure(RuntimeError):
    """Too many optimisation steps were aborted."""
