"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
to the documented process status without a lookup table.
"""


class TopDualError(Exception):
    exit_code = 1


class ConfigError(TopDualError):
    exit_code = 2


class DataError(TopDualError):
    exit_code = 3


class NumericError(TopDualError):
    exit_code = 4


class OutOfDomain(NumericError, ValueError):
    """A conjugate was evaluated where it equals +inf."""


class DimensionMismatch(DataError, ValueError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class AllocationTooLarge(ConfigError, MemoryError):
    pass


class FormatError(DataError):
    """Kernel cache file is corrupt, truncated or does not match."""


class SchemaVersionError(DataError):
    pass


class InfeasibleState(NumericError):
    pass


class InfeasibleConfig(NumericError):
    pass


class DegenerateDenominator(NumericError, ZeroDivisionError):
    pass


class DegenerateQuantile(NumericError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyFile(DataError):
    pass


class DegenerateClass(DataError):
    pass


class TooFewSamples(DataError):
    pass


class TargetUnreachable(DataError):
    pass
