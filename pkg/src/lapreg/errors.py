"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code so failures stay machine-parsable.
"""


class LapregError(Exception):
    """Base class; exit code 1 unless a subclass overrides it."""

    exit_code = 1
    category = "error"


class UsageError(LapregError):
    exit_code = 2
    category = "usage"


class DataError(LapregError):
    """Bad external input: unreadable file, non-finite values, bad labels."""

    exit_code = 3
    category = "data"


class ShapeError(DataError):
    """Shape or rank mismatch between fields."""

    exit_code = 3
    category = "shape"


class NumericalError(LapregError):
    """NaN/divergence during optimization or a failed numerical check."""

    exit_code = 4
    category = "numerical"
