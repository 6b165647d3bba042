"""Exception types raised across the package."""


class SfudaError(Exception):
    pass


class InvalidInput(SfudaError, ValueError):
    pass


class EmptyInput(SfudaError, ValueError):
    pass


class ZeroNorm(SfudaError, ValueError):
    pass


class FrozenModel(SfudaError, RuntimeError):
    """An update was attempted on a frozen (source) model."""


class EmptyIteration(SfudaError, ValueError):
    pass


class NoPrototypes(SfudaError, ValueError):
    pass


class ParseError(SfudaError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
