"""Exception hierarchy shared by every module of the package."""


class MklError(Exception):
    """Base class for all errors raised by enmkl."""


class InvalidInputError(MklError, ValueError):
    """Malformed or non-finite input (shapes, NaNs, bad parameters)."""


class NumericalError(MklError, ArithmeticError):
    """A numerical routine failed (eigensolver, root finder, PSD check)."""

    def __init__(self, message, block_index=None):
        if block_index is not None:
            message = f"block {block_index}: {message}"
        super().__init__(message)
        self.block_index = block_index


class InsufficientSpectrumError(MklError, ValueError):
    """Too few usable eigenvalues to fit a spectral decay exponent."""


class IllPosedError(MklError, ValueError):
    """The regularized problem has no unique solution."""


class InconsistentModelError(MklError, ValueError):
    """A model's coefficients contradict its declared active set."""


class ConfigError(MklError, ValueError):
    """A run configuration failed validation."""
