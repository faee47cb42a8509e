"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class CallosityError(Exception):
    exit_code = 1


class ConfigError(CallosityError, ValueError):
    """Bad user-supplied parameters or configuration."""

    exit_code = 1


class DimensionError(CallosityError, ValueError):
    """Tensor shapes do not compose."""

    exit_code = 1


class DataError(CallosityError, ValueError):
    """Malformed or unusable input data."""

    exit_code = 2


class DegenerateDataError(DataError):
    pass


class SegmentationError(DataError):
    pass


class StateError(CallosityError, RuntimeError):
    """Operation called in the wrong lifecycle state (e.g. backward before forward)."""

    exit_code = 1


class NumericError(CallosityError, ArithmeticError):
    """Non-finite values appeared during a computation."""

    exit_code = 3
