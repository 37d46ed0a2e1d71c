"""Exception hierarchy. The CLI maps each class to a stable exit code."""


class QrnnError(Exception):
    exit_code = 1


class ConfigError(QrnnError, ValueError):
    exit_code = 2


class DataError(QrnnError, ValueError):
    exit_code = 3


class NumericalError(QrnnError, ArithmeticError):
    exit_code = 4
