"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class LdpLabError(Exception):
    exit_code = 1


class ConfigurationError(LdpLabError, ValueError):
    """Malformed or inconsistent input (config file, grids, controls)."""

    exit_code = 2

    def __init__(self, message, pointer=None):
        self.pointer = pointer
        if pointer is not None:
            message = f"{message} (at {pointer})"
        super().__init__(message)


class NumericalError(LdpLabError, ArithmeticError):
    """A solver failed to converge or produced non-finite values."""

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class ResourceError(LdpLabError):
    """A configured resource cap (expected jump count, ...) was exceeded."""

    exit_code = 4
