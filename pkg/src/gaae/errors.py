"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericsError -> 4. Everything else is a plain failure.
"""


class GaaeError(Exception):
    pass


class DimensionError(GaaeError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ValidationError(GaaeError, ValueError):
    """An input value violates a documented precondition (e.g. not one-hot)."""


class TapeError(GaaeError, RuntimeError):
    """Misuse of the gradient tape (backward twice, non-scalar loss, ...)."""


class ConfigError(GaaeError, ValueError):
    """A run configuration violates its invariants."""


class DataError(GaaeError, ValueError):
    """Dataset / file-format problems (bad WAV, corrupt archive, ...)."""


class NumericsError(GaaeError, ArithmeticError):
    """Non-finite values where finite ones are required (NaN loss/grad)."""
