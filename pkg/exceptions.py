# exceptions.py
from typing import Any, Dict, Optional


class FilamentError(Exception):
    """Base class for every error raised by the filament services"""


class InvalidInputError(FilamentError):
    """Non-finite values, wrong shapes or out-of-range arguments"""


class GridMismatchError(InvalidInputError):
    """Two objects that must share a parameter grid do not"""


class UnsupportedOrderError(FilamentError):
    """Derivative order outside the closed-form range"""


class MeshTooFineError(FilamentError):
    """Covariation mesh finer than the sampling grid"""


class InsufficientDataError(FilamentError):
    """Not enough samples or history for the requested diagnostic"""


class CovarianceFactorizationError(FilamentError):
    """Covariance matrix could not be factorized"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BlowupError(FilamentError):
    """Evolution produced non-finite values"""

    def __init__(self, message: str, node: int, t: float):
        super().__init__(message)
        self.node = node
        self.t = t


class ConfigValidationError(FilamentError):
    """A run-config key is unknown or has an inadmissible value"""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
