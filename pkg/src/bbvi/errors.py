"""
Exception types raised by the BBVI engine and experiment harness.

Each error also derives from the closest builtin exception so callers that
catch ``ValueError`` or ``OSError`` keep working.
"""
from pathlib import Path
from typing import Optional, Union


class BBVIError(Exception):
    """Base class for all engine errors."""


class InvalidArgumentError(BBVIError, ValueError):
    """Shapes, indices or scalar arguments outside their valid range."""


class DomainViolationError(BBVIError, ValueError):
    """A scale matrix left the domain of positive-diagonal Cholesky factors."""


class UnsupportedOperationError(BBVIError, NotImplementedError):
    """The target or family cannot provide the requested quantity."""


class NumericalError(BBVIError, ArithmeticError):
    """A linear-algebra step failed (e.g. a precision is not positive definite)."""


class ConfigurationError(BBVIError, ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ResultsWriteError(BBVIError, OSError):
    """Writing an experiment artifact failed."""

    def __init__(self, path: Union[str, Path], reason: Optional[str] = None):
        self.path = Path(path)
        detail = f": {reason}" if reason else ""
        super().__init__(f"Could not write results to {self.path}{detail}")
