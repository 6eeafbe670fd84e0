"""Exception hierarchy. Each family maps onto a CLI exit code."""


class GnnBanditError(Exception):
    exit_code = 1


class ConfigError(GnnBanditError, ValueError):
    """Invalid configuration or argument value."""

    exit_code = 1


class DomainError(ConfigError):
    pass


class BudgetError(ConfigError):
    pass


class SizeError(ConfigError):
    pass


class FitError(ConfigError):
    pass


class AvailabilityError(ConfigError):
    def __init__(self, message, available=None):
        super().__init__(message)
        self.available = available


class DataError(GnnBanditError, ValueError):
    """Problem with input data: files, shapes, indices."""

    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class NodeIndexError(DataError, IndexError):
    pass


class ShapeError(DataError):
    pass


class FormatError(DataError):
    pass


class DegenerateNodeError(DataError):
    def __init__(self, node):
        super().__init__(f"node {node} has degree 0; normalization undefined without self-loops")
        self.node = node


class NumericError(GnnBanditError, ArithmeticError):
    exit_code = 3


class ConvergenceWarning(UserWarning):
    pass


class DegenerateWarning(UserWarning):
    pass
