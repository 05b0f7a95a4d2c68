"""Exception types shared across the package."""


class PortriskError(Exception):
    """Base class for all errors raised by this package."""


class DataError(PortriskError, ValueError):
    """Malformed or inconsistent input: files, panels, configs, arguments."""


class NumericalError(PortriskError, ArithmeticError):
    """A numerical routine could not produce a usable result."""


class UsageError(PortriskError, ValueError):
    """Invalid command-line invocation."""
