"""Exception hierarchy shared by the library and the CLI."""


class CPKANError(Exception):
    """Base class for every error raised by cpkan."""


class InvalidInputError(CPKANError, ValueError):
    """Arguments are malformed: wrong shape, non-finite value, bad range."""


class NumericalFailure(CPKANError, ArithmeticError):
    """A linear system stayed singular even after the ridge fallback."""


class UndefinedMetricError(CPKANError, ValueError):
    """A metric's denominator vanished (e.g. weighted R^2 with sum(w*y^2) == 0)."""


class ConfigError(CPKANError):
    """A run configuration is missing keys or refers to unknown options."""


class DataError(CPKANError):
    """Input data could not be read or has no usable rows."""


class ColumnError(DataError):
    """A column named in the configuration is absent from the CSV header."""
