"""Exception hierarchy shared across the library."""


class FatlabError(Exception):
    """Base class for all library-specific errors."""


class DimensionError(FatlabError, ValueError):
    """Operand shapes do not conform (message names both shapes)."""


class ConfigError(FatlabError, ValueError):
    """Invalid configuration value or descriptor."""


class GraphUsageError(FatlabError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar backward, double backward)."""


class FormatError(FatlabError, ValueError):
    """On-disk data does not match the expected binary format."""


class LengthError(FormatError):
    """File or payload is shorter/longer than its header promises."""


class NumericError(FatlabError, ArithmeticError):
    """Non-finite value where the training contract requires finite numbers."""
