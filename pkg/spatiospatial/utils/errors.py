"""
Exception hierarchy shared by every module.

Each error carries the exit code the command-line harness returns for it:
0 success, 1 usage/config error, 2 data/format error, 3 runtime numeric error.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class SpatiospatialError(Exception):
    exit_code = EXIT_RUNTIME


class ContractError(SpatiospatialError, ValueError):
    """A caller violated an operation's precondition."""


class ShapeError(ContractError):
    """Tensor extents do not agree."""


class InvalidGeometryError(SpatiospatialError, ValueError):
    """An output extent would be smaller than one, or an input is too small."""


class DegenerateStatisticsError(SpatiospatialError, ValueError):
    """Batch statistics requested over a single element per channel."""


class NumericError(SpatiospatialError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ParameterError(SpatiospatialError, ValueError):
    exit_code = EXIT_USAGE


class ConfigError(SpatiospatialError, ValueError):
    exit_code = EXIT_USAGE


class SurgeryError(SpatiospatialError, KeyError):
    """Checkpoint entries do not line up with the model being loaded."""
    exit_code = EXIT_USAGE

    def __str__(self):
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class DataError(SpatiospatialError, OSError):
    exit_code = EXIT_DATA


class FormatError(DataError, ValueError):
    exit_code = EXIT_DATA


class SplitError(DataError, ValueError):
    exit_code = EXIT_DATA


class DegenerateIntensityError(DataError, ValueError):
    exit_code = EXIT_DATA
