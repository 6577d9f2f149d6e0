"""Exception hierarchy.

Errors are grouped so the command line can map each category to an exit code:
configuration problems, data/format problems and numerical divergence.
"""


class CogCbtError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CogCbtError):
    """Invalid or malformed configuration value."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class DataError(CogCbtError):
    """Input data is malformed or inconsistent."""


class DimensionError(DataError, ValueError):
    pass


class FormatError(DataError):
    pass


class LengthError(DataError):
    pass


class SchemaError(DataError):
    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{path}: {message}")


class SplitError(DataError, ValueError):
    pass


class SamplingError(DataError, ValueError):
    pass


class DegenerateViewError(DataError):
    pass


class LagError(DataError, ValueError):
    pass


class MissingReadoutError(DataError, KeyError):
    pass


class ProtocolError(DataError):
    pass


class NumericalError(CogCbtError, ArithmeticError):
    """Base class for numerical failures."""


class ConvergenceError(NumericalError):
    def __init__(self, message, estimate):
        self.estimate = estimate
        super().__init__(f"{message} (last estimate {estimate!r})")


class RankError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch, message="loss became non-finite"):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")


class DegenerateReservoirError(NumericalError):
    pass


class DegenerateGraphError(NumericalError):
    pass


class ConnectivityError(NumericalError):
    pass


class DegenerateTestError(NumericalError):
    pass


class EvaluationError(DataError):
    pass
