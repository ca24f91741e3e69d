"""Exception hierarchy.

Each class carries the process exit code the CLI maps it to.
"""


class ShapgateError(Exception):
    exit_code = 1


class ValidationError(ShapgateError, ValueError):
    """Invalid configuration or arguments."""

    exit_code = 4


class ShapeError(ValidationError):
    """Array dimensions do not match what an operation expects."""

    def __init__(self, what, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class StorageError(ShapgateError, OSError):
    """Reading or writing an artifact failed."""

    exit_code = 3


class WeightsFormatError(StorageError):
    pass


class BadMagicError(WeightsFormatError):
    pass


class WeightsVersionError(WeightsFormatError):
    pass


class TruncatedWeightsError(WeightsFormatError):
    pass


class NumericError(ShapgateError, ArithmeticError):
    """Non-finite values appeared, e.g. a diverging training run."""

    exit_code = 5
