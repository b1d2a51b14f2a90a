"""Exception hierarchy shared by every module.

Each class carries an ``exit_code`` so the command line can map failures
onto its documented status codes without a lookup table.
"""


class AkiError(Exception):
    exit_code = 2


class ConfigError(AkiError, ValueError):
    """Invalid architecture, hyperparameter or command configuration."""

    exit_code = 1


class DimensionError(AkiError, ValueError):
    exit_code = 3


class StateError(AkiError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""

    exit_code = 3


class NumericError(AkiError, ArithmeticError):
    exit_code = 3


class LabelError(AkiError, ValueError):
    exit_code = 2


class SchemaError(AkiError, ValueError):
    exit_code = 2


class DataError(AkiError, ValueError):
    exit_code = 2


class ResamplingError(DataError):
    pass


class MetricUndefinedError(AkiError, ValueError):
    exit_code = 3


class PartitionError(AkiError, ValueError):
    exit_code = 2


class CheckpointError(AkiError, IOError):
    exit_code = 2
