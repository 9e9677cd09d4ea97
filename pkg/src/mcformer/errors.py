"""Exception hierarchy shared by every mcformer module."""


class McformerError(Exception):
    """Base class for all errors raised by this package."""


class InvalidShape(McformerError, ValueError):
    pass


class ShapeError(McformerError, ValueError):
    pass


class NotScalar(McformerError, ValueError):
    pass


class ConfigError(McformerError, ValueError):
    """Invalid configuration. ``key`` holds the dotted path when known."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class ParseError(McformerError, ValueError):
    def __init__(self, row, col, message):
        self.row = row
        self.col = col
        super().__init__(f"row {row}, column {col}: {message}")


class OrderError(McformerError, ValueError):
    pass


class SplitError(McformerError, ValueError):
    pass


class InsufficientData(McformerError, ValueError):
    pass


class InvalidWindow(McformerError, ValueError):
    pass


class NumericError(McformerError, ArithmeticError):
    pass


class FormatError(McformerError, ValueError):
    pass


class McformerWarning(UserWarning):
    pass
