"""Exception hierarchy shared by every module."""


class MGMLError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MGMLError, ValueError):
    pass


class BoundsError(MGMLError, IndexError):
    pass


class ConfigError(MGMLError, ValueError):
    pass


class DomainError(MGMLError, ValueError):
    pass


class UsageError(MGMLError, RuntimeError):
    pass


class ParseError(MGMLError, ValueError):
    """Malformed file content. The message always names the offending path."""


class DivergenceError(MGMLError, RuntimeError):
    """Raised when the training loss becomes non-finite."""
