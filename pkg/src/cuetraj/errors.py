"""Exception hierarchy shared across the package.

The CLI maps :class:`ValidationError` (and its subclasses) to exit code 1 and
everything else to exit code 2.
"""


class CuetrajError(Exception):
    """Base class for all package errors."""


class ValidationError(CuetrajError, ValueError):
    """Input data or configuration failed validation."""


class ConfigError(ValidationError):
    """An option or hyperparameter is invalid."""


class DimensionError(ValidationError):
    """Tensor shapes are incompatible."""


class UnknownLayoutError(ValidationError):
    """No keypoint layout is registered for the requested keypoint count."""


class ContractError(CuetrajError, RuntimeError):
    """A precondition of an operation does not hold."""


class CapacityError(ContractError):
    """An index exceeds the size of a learned table."""


class EmptyMapError(ContractError):
    """An attention map was requested over tokens the capture does not hold."""


class GenerationError(ValidationError):
    """A scenario specification cannot be realised."""


class TrainingError(CuetrajError, RuntimeError):
    """Training diverged or could not proceed."""
