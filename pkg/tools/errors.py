"""
Error types shared by every module
"""
from typing import Any, Dict, Optional, Tuple


class OUTimingError(Exception):
    """Base class for all library errors"""


class InputError(OUTimingError):
    """Bad input file, missing column or invalid configuration"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AlignmentError(InputError):
    """Two price series that should share a time axis do not"""


class QuadratureError(OUTimingError):
    """Quadrature did not reach the requested tolerance"""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual estimate {residual:.3e})")


class OutOfRangeError(OUTimingError):
    """Argument outside the representable range of a transform"""


class SolverError(OUTimingError):
    """Root bracketing or root finding failed"""

    def __init__(
        self,
        message: str,
        bracket: Optional[Tuple[float, float]] = None,
        residual: Optional[float] = None,
    ):
        self.bracket = bracket
        self.residual = residual
        details = []
        if bracket is not None:
            details.append(f"bracket=[{bracket[0]:.6g}, {bracket[1]:.6g}]")
        if residual is not None:
            details.append(f"residual={residual:.3e}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class CalibrationError(OUTimingError):
    """OU calibration failed; diagnostics describe why"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class DegenerateLikelihoodError(CalibrationError):
    """Transition standard deviation underflowed or vanished"""


class ResolutionError(OUTimingError):
    """Evaluation grid too coarse for the requested construction"""


class ConsistencyError(OUTimingError):
    """A solved quantity violates an ordering it must satisfy"""
