"""Exception hierarchy.  ``exit_code`` is what the CLI returns."""


class WDHTError(Exception):
    exit_code = 2


class ConfigError(WDHTError):
    exit_code = 1


class DataError(WDHTError, ValueError):
    exit_code = 2


class NumericError(WDHTError, ArithmeticError):
    exit_code = 3
