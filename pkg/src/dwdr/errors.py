"""Exception types shared across the package."""


class DWDRError(Exception):
    """Base class for all package errors."""


class DimensionError(DWDRError, ValueError):
    pass


class DegenerateBatchError(DWDRError, ValueError):
    pass


class NumericError(DWDRError, ArithmeticError):
    pass


class ConfigError(DWDRError, ValueError):
    pass


class DataError(DWDRError, ValueError):
    pass


class ContractError(DWDRError, RuntimeError):
    """Raised when the tape is misused, e.g. a second backward pass."""
