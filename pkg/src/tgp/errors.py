"""Exception hierarchy shared by the library and the command line."""


class TgpError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(TgpError, ValueError):
    """Invalid hyperparameter, option, or argument combination."""

    exit_code = 2


class DataError(TgpError):
    """Unreadable, malformed, or corrupt input/output files."""

    exit_code = 3


class NumericalError(TgpError, ArithmeticError):
    """A factorization, solve, or positivity requirement failed."""

    exit_code = 4
