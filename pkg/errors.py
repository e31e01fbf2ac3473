"""
Exception hierarchy for the reaction network toolkit.

Every domain error carries a short machine-readable ``code`` so the CLI can
emit a structured message ({"error": code, "message": ...}) without having
to know about each subclass. The builtin base of each class is chosen so
that callers catching ValueError / RuntimeError keep working.
"""
from typing import Any, Dict, Optional


class CRNError(Exception):
    """Base class of all domain errors."""

    code = "crn_error"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    def as_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"error": self.code, "message": self.message}
        if self.details:
            payload["details"] = self.details
        return payload


class NetworkSyntaxError(CRNError, ValueError):
    code = "syntax_error"

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, line=line)
        self.line = line


class NetworkValidationError(CRNError, ValueError):
    code = "invalid_network"

    def __init__(self, message: str, line: Optional[int] = None, **details: Any):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, line=line, **details)
        self.line = line


class DisconnectedNetwork(CRNError, ValueError):
    code = "disconnected_network"


class IndeterminateMinor(CRNError, ArithmeticError):
    code = "indeterminate_minor"


class NotWeaklyReversible(CRNError, ValueError):
    code = "not_weakly_reversible"


class NonPositiveEquilibrium(CRNError, ArithmeticError):
    code = "non_positive_equilibrium"


class SingularSubmatrix(CRNError, ArithmeticError):
    code = "singular_submatrix"


class SolverDivergence(CRNError, RuntimeError):
    code = "solver_divergence"


class WrongComponentKind(CRNError, ValueError):
    code = "wrong_component_kind"


class DegenerateDiffusion(CRNError, ValueError):
    code = "degenerate_diffusion"


class InsufficientDecay(CRNError, RuntimeError):
    code = "insufficient_decay"
