"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps each family onto a process exit code, so new errors should
subclass one of the three families below rather than ``FstcError`` directly.
"""


class FstcError(Exception):
    exit_code = 1


class ConfigError(FstcError, ValueError):
    exit_code = 2


class DataError(FstcError):
    exit_code = 3


class IngestionError(DataError):
    pass


class SamplingError(DataError, ValueError):
    pass


class CheckpointError(FstcError):
    exit_code = 4


class ContractError(FstcError, ValueError):
    """A caller broke an operation's precondition."""


class DimensionError(ContractError):
    pass


class NumericError(FstcError, ArithmeticError):
    """A NaN or infinity reached an operation boundary."""
