"""Exception hierarchy. CLI exit codes are attached to the classes."""


class DCRLError(Exception):
    exit_code = 1


class ConfigError(DCRLError, ValueError):
    exit_code = 2


class DimensionError(DCRLError, ValueError):
    exit_code = 2


class TapeError(DCRLError, RuntimeError):
    exit_code = 1


class DataError(DCRLError, ValueError):
    exit_code = 3


class FormatError(DataError):
    """Malformed binary input; the message names the byte offset."""


class ParseError(DataError):
    """Malformed text input; the message names the line number."""


class InitializationError(DCRLError, RuntimeError):
    exit_code = 4


class NumericalError(DCRLError, ArithmeticError):
    exit_code = 4


class CheckpointError(DataError):
    pass


class MetricError(DCRLError, ValueError):
    exit_code = 3
