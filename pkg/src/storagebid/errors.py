"""Exception hierarchy shared by every stage.

The CLI maps these onto process exit codes (2 config, 3 data, 4 numeric).
"""


class StorageBidError(Exception):
    """Base class for all package errors."""


class ConfigError(StorageBidError, ValueError):
    pass


class DataError(StorageBidError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class AlignmentError(DataError):
    pass


class GridMismatchError(StorageBidError, ValueError):
    pass


class NumericError(StorageBidError, ArithmeticError):
    pass
