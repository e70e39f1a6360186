"""Exception types shared across the package."""


class CovbalanceError(Exception):
    """Base class for package-specific errors."""


class DimensionMismatchError(CovbalanceError, ValueError):
    """Array shapes are inconsistent with each other or with stored state."""


class NotPositiveDefiniteError(CovbalanceError, ValueError):
    """A matrix required to be symmetric positive definite is not."""

    def __init__(self, message: str, smallest_eigenvalue: float | None = None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class DegenerateDataError(CovbalanceError, ValueError):
    """Data carries no usable variation (e.g. all rows identical)."""


class RankDeficiencyError(CovbalanceError, ValueError):
    """A design matrix is rank deficient; ``columns`` names the offenders."""

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = columns


class SeparationError(CovbalanceError, RuntimeError):
    """Logistic fit diverged: the classes are (quasi-)completely separated."""


class ConfigError(CovbalanceError, ValueError):
    """Invalid configuration values."""


class StateError(CovbalanceError, ValueError):
    """A persisted state document is unreadable, stale or corrupted."""


class DataFormatError(CovbalanceError, ValueError):
    """An input file does not parse; the message pinpoints row and column."""
