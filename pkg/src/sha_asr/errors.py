"""Exception hierarchy.

Errors fall into three categories that the CLI maps onto exit codes:
configuration problems (2), data/model problems (3) and remote service
failures (4).
"""


class ShaAsrError(Exception):
    exit_code = 1


class ConfigError(ShaAsrError, ValueError):
    exit_code = 2


class PlanError(ConfigError):
    """Stage plan incompatible with the model it is applied to."""


class SpecError(ConfigError):
    """Invalid synthetic corpus specification."""


class ParameterError(ConfigError):
    """Out-of-range numeric parameter (order, lambda, beam, ...)."""


class DataError(ShaAsrError, ValueError):
    exit_code = 3


class DimensionError(DataError):
    pass


class NumericError(DataError, ArithmeticError):
    pass


class LabelError(DataError, IndexError):
    pass


class DistributionError(DataError):
    pass


class ChunkError(DataError):
    pass


class LanguageError(DataError):
    pass


class InventoryError(DataError):
    """Chenone inventory mismatch between models, lexicon or posteriors."""


class CoverageError(DataError):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class ModelError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ServiceError(ShaAsrError, RuntimeError):
    exit_code = 4
