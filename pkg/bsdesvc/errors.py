# bsdesvc/errors.py
"""Error vocabulary shared by the engine, the handlers and the CLI.
Why: handlers turn these into (data, error, meta) tuples keyed by `code`.
"""
from __future__ import annotations

from typing import Any, Dict, Optional, Tuple


class GexpectError(Exception):
    def __init__(self, message: str = "", detail: Optional[Dict[str, Any]] = None):
        super().__init__(message or self.code)
        self.detail: Dict[str, Any] = dict(detail or {})

    @property
    def code(self) -> str:
        return type(self).__name__

    def meta(self) -> Dict[str, Any]:
        return {"code": self.code, **self.detail}


# --- probspace ---
class NonRefining(GexpectError): pass
class NonIncreasingClock(GexpectError): pass
class ProbabilityMismatch(GexpectError): pass
class ZeroProbabilityAtom(GexpectError): pass
class LevelOrder(GexpectError): pass
class ParamsOutOfRange(GexpectError): pass
class NoStep(GexpectError): pass

# --- martrep / stochcalc ---
class DimensionMismatch(GexpectError): pass
class NotAMartingale(GexpectError): pass
class JumpTooLarge(GexpectError): pass
class NotADensity(GexpectError): pass

# --- bsde / gexp ---
class MetadataMissing(GexpectError): pass
class RootFindFailure(GexpectError): pass
class Unsupported(GexpectError): pass
class DriverNotAdmissible(GexpectError): pass
class RNotBalanced(GexpectError): pass
class BadInterval(GexpectError): pass
class NotSubmartingale(GexpectError): pass

# --- doobmeyer / represent ---
class NegativeCompensator(GexpectError): pass
class NoConvergence(GexpectError): pass
class NotEMartingale(GexpectError): pass
class BoundViolated(GexpectError): pass
class OracleNotDominated(GexpectError): pass
class OracleAuditFailed(GexpectError): pass
class OracleQueryError(GexpectError): pass
class DominationViolated(GexpectError): pass

# --- cli ---
class CheckFailed(GexpectError): pass


class ScenarioInvalid(GexpectError):
    def __init__(self, message: str, pointer: str = "", detail: Optional[Dict[str, Any]] = None):
        super().__init__(f"{pointer}: {message}" if pointer else message, detail)
        self.pointer = pointer
        self.detail.setdefault("pointer", pointer)


def failure(command: str, exc: BaseException) -> Tuple[None, str, Dict[str, Any]]:
    """(data, error, meta) triple for a handler that caught exc."""
    meta = exc.meta() if isinstance(exc, GexpectError) else {"code": type(exc).__name__}
    return None, f"/{command} failed: {type(exc).__name__}: {exc}", meta
