"""Exception types shared across the package."""


class FairforgetError(Exception):
    """Base class for all package-specific failures."""


class ConfigurationError(FairforgetError):
    """Invalid arguments, dimensions, or config values."""


class NumericError(FairforgetError):
    """A computation produced NaN or Inf."""


class CapacityError(FairforgetError):
    """An operation would exceed a built-in size guard."""


class SolverError(FairforgetError):
    """Iterative solver failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class IngestionError(FairforgetError):
    """Raw dataset file missing or malformed."""


class DegenerateGroupError(FairforgetError):
    """Group partition has no qualifying cross-group pair."""


class DegenerateMetricError(FairforgetError):
    """A (group, label) cell needed by a metric is empty."""


class UndefinedRatioError(FairforgetError):
    """Increment ratio requested with a zero baseline."""


class TrainingError(FairforgetError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ContractError(FairforgetError):
    """An operation was invoked outside its declared contract."""


class AttackError(FairforgetError):
    """Attack optimization failed; carries restart/step location."""

    def __init__(self, message, restart=None, step=None):
        super().__init__(message)
        self.restart = restart
        self.step = step


class ReportingError(FairforgetError):
    """Aggregation asked for result series that do not exist."""
