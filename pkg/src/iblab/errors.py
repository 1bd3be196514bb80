"""Exception taxonomy shared across the package.

Each class maps to one CLI exit code (see cli.py), so library code should
raise the most specific type that applies rather than bare ValueError.
"""


class IBLabError(Exception):
    """Base class for all package errors."""


class ConfigError(IBLabError):
    """Invalid configuration: bad shapes, unknown names, out-of-range values.

    carries .problems, a list of human-readable violation strings, so a
    validator can report every problem at once instead of the first.
    """

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems is not None else [message]


class DataError(IBLabError):
    """Missing or malformed input data (dataset files, label ranges)."""


class UsageError(IBLabError):
    """API called out of order, e.g. optimizer step before backward."""


class NumericsError(IBLabError):
    """Numerical failure: divergence, NaN/Inf loss, impossible target."""


class InstabilityError(NumericsError):
    """A trained estimator's bound exceeded its finite-sample ceiling."""


class CalibrationError(NumericsError):
    """A calibration target is unreachable; .nearest holds the closest value."""

    def __init__(self, message, nearest=None):
        super().__init__(message)
        self.nearest = nearest


class TrainingDiverged(NumericsError):
    """Loss became non-finite during training; .log holds rows up to failure."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class StorageError(IBLabError):
    """Artifact I/O failure: bad magic, checksum mismatch, truncated file."""
