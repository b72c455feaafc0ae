"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so every raise site picks the most
specific class available.
"""


class SodaError(Exception):
    """Base class for all package errors."""


class ShapeError(SodaError, ValueError):
    pass


class ContractError(SodaError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(SodaError, ValueError):
    pass


class DataError(SodaError, ValueError):
    """Bad input data (non-finite values, malformed records)."""


class SchemaError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class CheckpointError(DataError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointConfigMismatch(CheckpointError):
    pass


class NumericError(SodaError, ArithmeticError):
    """Training produced a non-finite loss."""


class InferenceError(SodaError, ValueError):
    pass
