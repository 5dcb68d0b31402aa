"""Exception types shared across the package.

The CLI maps these onto exit-code categories: ConfigError -> config,
DataFormatError/OSError -> io, everything else numeric/contract.
"""


class UltraError(Exception):
    """Base class for all package errors."""


class ShapeError(UltraError, ValueError):
    """Operand shapes do not conform."""


class ParameterError(UltraError, ValueError):
    """A numeric parameter is outside its admissible domain."""


class InputError(UltraError, ValueError):
    """Input data violates a precondition (NaN, out-of-range labels, ...)."""


class ContractError(UltraError, RuntimeError):
    """An operation was invoked outside its contract (non-scalar backward
    root, hard inference under an active tape, unknown neuron kind, ...)."""


class DataFormatError(UltraError, ValueError):
    """A file does not match its declared binary/text format."""


class ConfigError(UltraError, ValueError):
    """Invalid run configuration."""
