"""Exception types raised by sparse_obs."""
from typing import Optional


class SparseObsError(Exception):
    """
    Base error. Carries the exception that caused it, if any, and free-text details
    that are appended to the message.
    """
    def __init__(self, message: str, cause: Optional[BaseException] = None, details: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.cause = cause
        self.details = details

    def __str__(self):
        text = self.message
        if self.details:
            text += f" ({self.details})"
        if self.cause is not None:
            text += f" [caused by: {self.cause}]"
        return text


class InvalidParameterError(SparseObsError, ValueError):
    pass


class GraphIndexError(SparseObsError, IndexError):
    pass


class ModelValidationError(SparseObsError):
    """A model invariant is violated. ``constraint`` names it, ``indices`` locate it."""
    def __init__(self, message: str, constraint: str, indices=None, **kwargs):
        super().__init__(message, **kwargs)
        self.constraint = constraint
        self.indices = indices


class MissingArityError(SparseObsError, KeyError):
    def __init__(self, arity: int):
        super().__init__(f"No observation kernel for arity {arity}.")
        self.arity = arity

    def __str__(self):
        return self.message


class InfeasibleSizeError(SparseObsError):
    pass


class ImpossibleWorldError(SparseObsError):
    """The observations have zero probability under the model (total weight 0)."""
    pass


class ZeroNormalizerError(SparseObsError):
    """A message or marginal update produced an all-zero vector."""
    def __init__(self, message: str, edge=None, node=None, **kwargs):
        super().__init__(message, **kwargs)
        self.edge = edge
        self.node = node


class NonSoftModelError(SparseObsError):
    pass


class ConfigError(SparseObsError):
    def __init__(self, message: str, field: str, **kwargs):
        super().__init__(f"Invalid config field '{field}': {message}", **kwargs)
        self.field = field


class UsageError(SparseObsError):
    """Unknown subcommand, unknown flag or a malformed flag value."""
    pass
