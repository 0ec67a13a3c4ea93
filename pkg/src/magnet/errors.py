"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so each class corresponds to one
failure category rather than one call site.
"""


class MagnetError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MagnetError, ValueError):
    """A caller passed an argument outside an operation's domain."""


class InvalidDataError(MagnetError, ValueError):
    """Input data (arrays or files on disk) violates a format or invariant."""


class ConfigurationError(MagnetError, ValueError):
    """Hyperparameters or component settings are mutually inconsistent."""


class NumericError(MagnetError, ArithmeticError):
    """A computation produced or received non-finite values."""


class StateError(MagnetError, RuntimeError):
    """An operation was invoked in the wrong lifecycle state."""
