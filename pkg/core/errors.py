from __future__ import annotations

"""
Error types shared by every deepmorph module.

Each error carries a short `reason` code so the CLI can print a stable
token and map it onto an exit code.
"""

from typing import Any, Optional


class DeepMorphError(RuntimeError):
    reason = "ERROR"

    def __init__(self, message: str = "", reason: Optional[str] = None) -> None:
        super().__init__(message or self.reason)
        if reason is not None:
            self.reason = reason


class DegenerateInput(DeepMorphError):
    reason = "DegenerateInput"


class NoRealCircle(DeepMorphError):
    reason = "NoRealCircle"


class NonConvergence(DeepMorphError):
    """Raised when an iterative solver runs out of iterations. `best` holds the best iterate."""

    reason = "NonConvergence"

    def __init__(self, message: str, best: Any = None) -> None:
        super().__init__(message)
        self.best = best


class ShapeMismatch(DeepMorphError):
    reason = "ShapeMismatch"


class DegenerateShape(DeepMorphError):
    reason = "DegenerateShape"


class CoefficientMismatch(DeepMorphError):
    reason = "CoefficientMismatch"


class RegistrationFailed(DeepMorphError):
    reason = "RegistrationFailed"


class InsufficientForeground(DeepMorphError):
    reason = "InsufficientForeground"


class OutOfRange(DeepMorphError):
    reason = "OutOfRange"


class InvalidGeometry(DeepMorphError):
    reason = "InvalidGeometry"


class EmptyProjection(DeepMorphError):
    reason = "EmptyProjection"


class AmplitudeMismatch(DeepMorphError):
    reason = "AmplitudeMismatch"


class EmptyFixtureSet(DeepMorphError):
    reason = "EmptyFixtureSet"


class FormatError(DeepMorphError):
    reason = "FormatError"


class DegenerateGeometry(UserWarning):
    """Render produced a uniform attenuation field; every unmasked pixel is gray_max."""
