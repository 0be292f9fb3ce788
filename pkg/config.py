# config.py - engine settings and report envelope

from __future__ import annotations

import logging
import os
import sys
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional

SCHEMA_VERSION = 1
VERSION = "1.0.0"


def _env_float(name: str, default: str) -> float:
    raw = os.environ.get(name, default)
    try:
        return float(raw)
    except ValueError as e:
        raise RuntimeError(f"Invalid {name}={raw!r}: expected a number") from e


def _env_int(name: str, default: str) -> int:
    raw = os.environ.get(name, default)
    try:
        return int(raw)
    except ValueError as e:
        raise RuntimeError(f"Invalid {name}={raw!r}: expected an integer") from e


# --- Environment-driven configuration ---
@dataclass(frozen=True)
class EngineSettings:
    tol: float = _env_float("GEXPECT_TOL", "1e-10")
    root_tol: float = _env_float("GEXPECT_ROOT_TOL", "1e-13")
    neg_tol: float = _env_float("GEXPECT_NEG_TOL", "1e-12")
    prob_tol: float = _env_float("GEXPECT_PROB_TOL", "1e-9")
    seed: int = _env_int("GEXPECT_SEED", "0")
    samples: int = _env_int("GEXPECT_SAMPLES", "200")
    eps: float = _env_float("GEXPECT_EPS", "1.0")
    oracle_budget: int = _env_int("GEXPECT_ORACLE_BUDGET", "10000")
    contraction: float = _env_float("GEXPECT_CONTRACTION", "0.5")
    quant_digits: int = _env_int("GEXPECT_QUANT_DIGITS", "12")
    workers: int = _env_int("GEXPECT_WORKERS", "1")
    log_level: str = os.environ.get("GEXPECT_LOG_LEVEL", "WARNING")

    def with_overrides(self, **kw: Any) -> "EngineSettings":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


SETTINGS = EngineSettings()


def configure_logging(level: Optional[str] = None) -> None:
    """Route diagnostics to stderr; stdout is reserved for reports."""
    name = (level or SETTINGS.log_level).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# --- Report wrapper ---
def wrap(data=None, echo=None, hint=None, error=None) -> Dict[str, Any]:
    """
    Standard report envelope for all commands.
    - Always carries the schema version.
    - Error reports keep echo and hint so a failing run still explains itself.
    """
    if error:
        return {"schema": SCHEMA_VERSION, "error": error, "echo": echo, "hint": hint}
    return {"schema": SCHEMA_VERSION, "data": data, "echo": echo, "hint": hint}
