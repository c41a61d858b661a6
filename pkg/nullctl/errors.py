"""
Exception hierarchy for nullctl
"""

from typing import Any, Dict, Optional


class NullCtlError(Exception):
    """Base class for every error raised by the package"""


class ValidationError(NullCtlError, ValueError):
    """Inputs violate a documented invariant or precondition"""


class ConvergenceError(NullCtlError, RuntimeError):
    """A numerical routine failed to reach its tolerance"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})


class NumericalBlowupError(ConvergenceError):
    """NaN or Inf appeared in a time-stepping state"""


class UncontrollableModeError(ConvergenceError):
    """The control Gramian is singular in a direction the target needs"""


class StageSynthesisError(ConvergenceError):
    """A Lebeau-Robbiano stage could not synthesize its partial control"""

    def __init__(self, stage: int, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        diagnostics = dict(diagnostics or {})
        diagnostics.setdefault("stage", stage)
        super().__init__(f"stage {stage}: {message}", diagnostics)
        self.stage = stage
