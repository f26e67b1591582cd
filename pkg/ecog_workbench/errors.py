"""
Exception hierarchy for the decoding workbench

Every error raised by the library derives from WorkbenchError and carries the
process exit code the CLI reports for it.
"""


class WorkbenchError(Exception):
    """Base class for all workbench errors"""
    exit_code = 3
    kind = "internal"


class ConfigError(WorkbenchError):
    """Invalid configuration, command-line flag or config file"""
    exit_code = 1
    kind = "config"


class DataError(WorkbenchError):
    """Missing, malformed or inconsistent data on disk or in memory"""
    exit_code = 2
    kind = "data"


class InvariantError(DataError):
    """A domain type invariant does not hold"""


class NumericError(WorkbenchError):
    """A numerical procedure failed (non-finite values, singular systems)"""
    exit_code = 3
    kind = "numeric"


class RankDeficiencyWarning(UserWarning):
    """A covariance matrix was regularized because it was rank-deficient"""
