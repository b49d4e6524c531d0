"""Exception types raised across the package."""


class BlockedCvError(Exception):
    """Base class for all errors raised by blockedcv."""


class DataError(BlockedCvError):
    """Malformed or unusable input data."""


class PartitionError(BlockedCvError):
    """Invalid fold-partition request."""


class LearnerError(BlockedCvError):
    """Invalid learner configuration or training input."""


class DesignError(BlockedCvError):
    """Invalid grid or design plan, or a failed design cell."""


class AnovaError(BlockedCvError):
    """Model cannot be fitted to the given error table."""


class UnbalancedTableError(AnovaError):
    """A model term is not balanced/orthogonal in the table."""


class ConfigError(BlockedCvError):
    """Invalid run configuration."""
