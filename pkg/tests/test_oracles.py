# tests/test_oracles.py
import io
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from bsdesvc.errors import LevelOrder, NotADensity, OracleQueryError, RNotBalanced
from bsdesvc.oracles import ClassicalOracle, ErOracle, ExternalOracle, TableOracle, WorstCaseOracle
from bsdesvc.probspace import RandomVariable
from bsdesvc.rmatrix import RMatrix
from bsdesvc.scenario import default_external_command
from jobs.oracle_server import answer, serve

REPO_ROOT = Path(__file__).resolve().parents[1]
Q_S2 = RandomVariable(1, [1.0, -1.0])


def test_classical_counts_calls(s2):
    oracle = ClassicalOracle(s2)
    assert oracle.cond(Q_S2, 0).values.tolist() == [0.0]
    assert oracle.cond(Q_S2, 1).values.tolist() == [1.0, -1.0]
    assert oracle.calls == 2
    with pytest.raises(LevelOrder):
        oracle.cond(Q_S2, 2)


def test_er_oracle_refuses_unbalanced_r(s2_basis):
    with pytest.raises(RNotBalanced):
        ErOracle(RMatrix.from_param(s2_basis, 2.0))


def test_table_hit_and_miss(s2):
    oracle = TableOracle(s2, [{"q": [1.0, -1.0], "level": 1, "levels": [[0.25], [1.0, -1.0]]}])
    assert oracle.cond(Q_S2, 0).values.tolist() == [0.25]
    with pytest.raises(OracleQueryError):
        oracle.cond(RandomVariable(1, [2.0, 0.0]), 0)
    assert oracle.provenance == "table"


def test_worst_case_is_not_time_consistent(s3):
    oracle = WorstCaseOracle(s3, [[0.25, 0.25, 0.25, 0.25], [0.4, 0.1, 0.1, 0.4]])
    X = RandomVariable(2, [1.0, -1.0, 1.0, -1.0])
    inner = oracle.cond(X, 1)
    assert inner.values.tolist() == pytest.approx([0.6, 0.0])
    assert oracle.cond(X, 0).values.tolist() == pytest.approx([0.0])
    assert oracle.cond(inner, 0).values.tolist() == pytest.approx([0.3])


def test_worst_case_rejects_bad_measures(s2):
    with pytest.raises(NotADensity):
        WorstCaseOracle(s2, [])
    with pytest.raises(NotADensity):
        WorstCaseOracle(s2, [[1.0, 0.0]])


def test_answer_protocol(half_r):
    oracle = ErOracle(half_r)
    assert answer(oracle, b'{"q": [1.0, -1.0], "level": 0}')["values"] == pytest.approx([0.5])
    assert answer(oracle, b'{"q": [1.0, -1.0]}')["error"].startswith("bad request: KeyError")
    assert answer(oracle, b"not json")["error"].startswith("bad request")
    assert answer(oracle, b'{"q": [1.0, -1.0], "level": 3}')["error"].startswith("LevelOrder:")


def test_serve_skips_blank_lines(half_r):
    out = io.BytesIO()
    n = serve(ErOracle(half_r), io.BytesIO(b'{"q": [2.0, 0.0], "level": 0}\n\n{"q": [1.0, 1.0], "level": 1}\n'), out)
    assert n == 2
    replies = [json.loads(line) for line in out.getvalue().splitlines()]
    assert replies[0]["values"] == pytest.approx([1.5])
    assert replies[1]["values"] == [1.0, 1.0]


def test_external_oracle_round_trip(s2, scenario_file, monkeypatch):
    monkeypatch.chdir(REPO_ROOT)
    command = default_external_command(scenario_file(), "er")
    with ExternalOracle(s2, command) as oracle:
        assert oracle.cond(Q_S2, 0).values.tolist() == pytest.approx([0.5])
        assert oracle.cond(Q_S2, 1).values.tolist() == [1.0, -1.0]
        assert np.allclose(oracle.cond(RandomVariable(0, [3.0]), 0).values, [3.0])
        with pytest.raises(LevelOrder):
            oracle.cond(RandomVariable(1, [1.0, 2.0]), 5)
    assert oracle.calls == 3
    assert oracle.concurrent is False


def test_external_oracle_bad_command(s2, tmp_path):
    with pytest.raises(OracleQueryError):
        ExternalOracle(s2, [str(tmp_path / "missing-binary")])


def test_external_oracle_times_out_on_silent_process(s2):
    oracle = ExternalOracle(s2, [sys.executable, "-c", "import time; time.sleep(30)"], timeout=0.5)
    started = time.monotonic()
    with pytest.raises(OracleQueryError) as info:
        oracle.cond(Q_S2, 0)
    assert time.monotonic() - started < 10.0
    assert info.value.detail["timeout"] == 0.5
    assert oracle._proc.poll() is not None
    with pytest.raises(OracleQueryError):
        oracle.cond(Q_S2, 0)
    oracle.close()
