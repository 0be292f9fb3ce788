# bsdesvc/report.py
"""Check records and report emission.

JSON goes through orjson (sorted keys, numpy arrays serialized natively); text
is a flat `key: value` listing with sorted keys and repr floats, so two runs
with the same scenario and seed produce identical bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

try:
    import orjson  # type: ignore
    _USE_ORJSON = True
except Exception:
    _USE_ORJSON = False


@dataclass
class Check:
    name: str
    passed: bool
    worst: float = 0.0
    witness: Optional[Dict[str, Any]] = None
    details: Dict[str, Any] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed

    def as_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "worst": self.worst, "witness": self.witness,
                **self.details}


def summarize(checks: Iterable[Check]) -> Dict[str, Any]:
    rows = [c.as_dict() for c in checks]
    return {"passed": all(r["passed"] for r in rows), "checks": rows}


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Check):
        return _plain(obj.as_dict())
    return obj


def to_json(envelope: Dict[str, Any]) -> bytes:
    if _USE_ORJSON:
        return orjson.dumps(
            _plain(envelope),
            option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY,
        ) + b"\n"
    return (json.dumps(_plain(envelope), indent=2, sort_keys=True) + "\n").encode("utf-8")


def _text_lines(prefix: str, obj: Any, out: List[str]) -> None:
    if isinstance(obj, dict):
        if not obj:
            out.append(f"{prefix}: {{}}")
        for k in sorted(obj, key=str):
            _text_lines(f"{prefix}.{k}" if prefix else str(k), obj[k], out)
    elif isinstance(obj, list):
        if not obj:
            out.append(f"{prefix}: []")
        for i, v in enumerate(obj):
            _text_lines(f"{prefix}[{i}]", v, out)
    elif isinstance(obj, float):
        out.append(f"{prefix}: {obj!r}")
    elif obj is None:
        out.append(f"{prefix}: null")
    elif isinstance(obj, bool):
        out.append(f"{prefix}: {'true' if obj else 'false'}")
    else:
        out.append(f"{prefix}: {obj}")


def to_text(envelope: Dict[str, Any]) -> bytes:
    """Deterministic rendering; wall-clock entries are dropped."""
    env = _plain(envelope)
    hint = env.get("hint")
    if isinstance(hint, dict):
        hint = {k: v for k, v in hint.items() if k != "elapsed_s"}
        env = {**env, "hint": hint}
    lines: List[str] = []
    _text_lines("", env, lines)
    return ("\n".join(lines) + "\n").encode("utf-8")


def render(envelope: Dict[str, Any], fmt: str = "json") -> bytes:
    return to_text(envelope) if fmt == "text" else to_json(envelope)
