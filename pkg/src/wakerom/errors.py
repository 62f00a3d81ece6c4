"""Exception hierarchy shared by the library, the CLI and the MCP tools."""


class WakeRomError(Exception):
    """Base class for every error raised by wakerom."""


class ConfigError(WakeRomError):
    """Invalid or unreadable pipeline configuration."""


class DimensionError(WakeRomError, ValueError):
    """Array shapes do not match what an operation expects."""


class GeometryMismatchError(WakeRomError, ValueError):
    """Two fields are defined on different point sets."""


class DivergenceError(WakeRomError):
    """Network training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class ProviderError(WakeRomError):
    """A snapshot provider failed to solve one inlet."""

    def __init__(self, index: int, message: str):
        super().__init__(f"snapshot {index}: {message}")
        self.index = index


class SnapshotFormatError(WakeRomError):
    """Snapshot files on disk are malformed or inconsistent."""


class ReductionError(WakeRomError):
    """Reducer fit or evaluation failed."""


class RegressionError(WakeRomError):
    """Regressor fit failed."""

    def __init__(self, message: str, condition: float | None = None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class FitError(WakeRomError):
    """Fitting a ROM variant failed."""

    def __init__(self, variant: str, cause: Exception):
        super().__init__(f"{variant}: {cause}")
        self.variant = variant
        self.cause = cause


class FitnessError(WakeRomError):
    """The optimization objective returned a non-finite value."""

    def __init__(self, mu, value: float):
        super().__init__(f"non-finite fitness {value} at mu={list(mu)}")
        self.mu = mu
        self.value = value
