"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or scenario file."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed (e.g. covariance factorization)."""


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt or structurally incompatible."""


class ProtocolError(RuntimeError):
    """A simulated message exchange did not deliver required data."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss; carries the last good state."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
