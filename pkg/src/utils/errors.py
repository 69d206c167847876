"""
Exception hierarchy shared by every module; each error carries the CLI exit code.
"""


class QCogniError(Exception):
    exit_code = 2


class UsageError(QCogniError):
    exit_code = 1


class ConfigurationError(QCogniError):
    exit_code = 2


class ContractError(QCogniError):
    exit_code = 2


class DataError(QCogniError):
    exit_code = 2


class ConvergenceError(QCogniError):
    exit_code = 3

    def __init__(self, message, h_value):
        self.h_value = h_value
        super().__init__(f"{message} (final h(W) = {h_value:.3e})")
