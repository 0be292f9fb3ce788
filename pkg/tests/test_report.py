# tests/test_report.py
import json

import numpy as np

from bsdesvc.report import Check, render, summarize, to_json, to_text
from config import wrap


def _envelope():
    checks = [Check("a", True, 0.0), Check("b", False, 1e-3, {"node": "u"}, {"verdict": "Inconclusive"})]
    data = {**summarize(checks), "Y0": 0.1, "levels": [np.array([1.0, 2.5])], "none": None}
    return wrap(data, {"command": "solve"}, {"elapsed_s": 0.123, "version": "x"})


def test_summarize():
    out = summarize([Check("a", True), Check("b", False)])
    assert out["passed"] is False
    assert [c["name"] for c in out["checks"]] == ["a", "b"]


def test_check_details_are_merged():
    row = Check("c", True, 0.5, None, {"allowed": 1.0}).as_dict()
    assert row == {"name": "c", "passed": True, "worst": 0.5, "witness": None, "allowed": 1.0}


def test_json_is_sorted_and_plain():
    raw = to_json(_envelope())
    env = json.loads(raw)
    assert list(env) == ["data", "echo", "hint", "schema"]
    assert env["data"]["levels"] == [[1.0, 2.5]]
    assert raw.endswith(b"\n")


def test_text_rendering():
    text = to_text(_envelope()).decode()
    lines = text.splitlines()
    assert "data.Y0: 0.1" in lines
    assert "data.passed: false" in lines
    assert "data.none: null" in lines
    assert "data.levels[0][1]: 2.5" in lines
    assert "data.checks[1].witness.node: u" in lines
    assert "hint.version: x" in lines
    assert not any(line.startswith("hint.elapsed_s") for line in lines)
    assert lines == sorted(lines, key=lambda s: s.split(".")[0])


def test_render_dispatch():
    env = _envelope()
    assert render(env, "text") == to_text(env)
    assert render(env) == to_json(env)


def test_error_envelope_renders():
    env = wrap(None, {"command": "basis"}, {"code": "ScenarioInvalid"}, "/basis failed: ScenarioInvalid: x")
    assert "error: /basis failed: ScenarioInvalid: x" in to_text(env).decode().splitlines()
