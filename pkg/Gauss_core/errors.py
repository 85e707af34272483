"""
errors.py
- Exception hierarchy shared by every formlab package
- each error carries a machine-readable `kind` and the CLI exit code
"""
from typing import Any, Dict, Optional


class FormlabError(Exception):
    kind = "internal"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.kind, "message": self.message, "details": self.details}


class InputFileError(FormlabError, OSError):
    kind = "io"
    exit_code = 2


class ParseError(FormlabError, ValueError):
    kind = "parse"
    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        if line is not None:
            details["line"] = line
            message = f"line {line}: {message}"
        super().__init__(message, details)
        self.line = line


class EmptyInputError(FormlabError, ValueError):
    kind = "empty_input"
    exit_code = 3


class DegenerateFrameError(FormlabError, ValueError):
    kind = "degenerate_frame"
    exit_code = 3


class InsufficientDataError(FormlabError, ValueError):
    kind = "insufficient_data"
    exit_code = 4


class CandidateExplosionError(FormlabError, RuntimeError):
    kind = "candidate_explosion"
    exit_code = 4


class ContractViolationError(FormlabError, ValueError):
    kind = "contract_violation"
    exit_code = 4


class NumericError(FormlabError, ArithmeticError):
    kind = "numeric"
    exit_code = 5


class RegimeCollapseError(FormlabError, RuntimeError):
    kind = "regime_collapse"
    exit_code = 5

    def __init__(self, regime: int, responsibility: float, n_frames: int):
        super().__init__(
            f"regime {regime} collapsed: total responsibility {responsibility:.3g} over {n_frames} frames",
            {"regime": regime, "responsibility": responsibility, "n_frames": n_frames},
        )
        self.regime = regime


class ConfigError(FormlabError, ValueError):
    kind = "config"
    exit_code = 6
