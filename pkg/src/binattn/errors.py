"""Exception hierarchy shared by every module."""


class BinAttnError(Exception):
    """Base class for all library errors."""


class ValidationError(BinAttnError, ValueError):
    pass


class ShapeError(BinAttnError, ValueError):
    pass


class RangeError(BinAttnError, ValueError):
    pass


class FormatError(BinAttnError, ValueError):
    """A tensor file is malformed, truncated or non-canonical."""


class IoError(BinAttnError, OSError):
    pass


class NumericalError(BinAttnError, ArithmeticError):
    pass


class ConfigError(BinAttnError, ValueError):
    pass
