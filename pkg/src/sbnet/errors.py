"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SBNetError(Exception):
    exit_code = 1


class DimensionError(SBNetError, ValueError):
    pass


class DegenerateVectorError(SBNetError, ValueError):
    pass


class LabelError(SBNetError, ValueError):
    pass


class BatchTooSmallError(SBNetError, ValueError):
    pass


class ContractError(SBNetError, RuntimeError):
    """A forward cache was reused or fed to the wrong backward."""


class DataError(SBNetError, ValueError):
    pass


class ParseError(DataError):
    exit_code = 2


class StratificationError(SBNetError, ValueError):
    pass


class MetricUndefinedError(SBNetError, ValueError):
    pass


class MergeError(SBNetError, ValueError):
    pass


class ConfigError(SBNetError, ValueError):
    exit_code = 3


class NumericError(SBNetError, FloatingPointError):
    pass
