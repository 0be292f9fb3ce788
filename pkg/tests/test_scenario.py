# tests/test_scenario.py
import json

import pytest

from bsdesvc.errors import ScenarioInvalid
from bsdesvc.oracles import ClassicalOracle, ErOracle, GOracle, TableOracle
from bsdesvc.scenario import load_scenario, scenario_from_dict
from conftest import S2_SPEC, s2_scenario


def _invalid(raw) -> ScenarioInvalid:
    with pytest.raises(ScenarioInvalid) as info:
        scenario_from_dict(raw)
    return info.value


def test_load_and_resolve(scenario_file):
    sc = load_scenario(scenario_file())
    assert sc.space.K == 1
    assert sc.basis.d == 1
    assert sc.rmatrix("half") is sc.rmatrix("half")
    assert sc.driver("half").r is sc.rmatrix("half")
    assert sc.driver("neg_half").sign == -1.0
    assert sc.payoff("q").values.tolist() == [1.0, -1.0]
    assert isinstance(sc.oracle("er"), ErOracle)
    assert isinstance(sc.oracle("g_half"), GOracle)
    assert isinstance(sc.oracle("classical"), ClassicalOracle)
    assert sc.oracle("er") is sc.oracle("er")


def test_processes(scenario_file):
    sc = load_scenario(scenario_file())
    assert sc.process("super").levels[1].tolist() == [1.0, -1.0]
    mart = sc.process("mart")
    assert mart.levels[0][0] == pytest.approx(0.5)


def test_builtin_zero_driver_without_declaration():
    sc = scenario_from_dict(s2_scenario(drivers={}, oracles={}, processes={}))
    assert sc.driver("zero").name == "zero"


def test_unknown_references():
    sc = scenario_from_dict(s2_scenario())
    with pytest.raises(ScenarioInvalid) as info:
        sc.driver("x")
    assert info.value.pointer == "/drivers/x"
    with pytest.raises(ScenarioInvalid) as info:
        sc.payoff("nope")
    assert info.value.pointer == "/payoffs/nope"
    with pytest.raises(ScenarioInvalid) as info:
        sc.oracle("nope")
    assert info.value.pointer == "/oracles/nope"


def test_dangling_references_fail_up_front():
    err = _invalid(s2_scenario(oracles={"bad": {"kind": "g", "driver": "missing"}}))
    assert err.pointer == "/oracles/bad/driver"
    err = _invalid(s2_scenario(drivers={"d": {"kind": "r_norm", "params": {"r": "ghost"}}}))
    assert err.pointer == "/drivers/d/params/r"
    err = _invalid(s2_scenario(processes={"p": {"e_g": {"driver": "zero", "payoff": "ghost"}}}))
    assert err.pointer == "/processes/p/e_g/payoff"


def test_schema_errors_carry_pointers():
    err = _invalid(s2_scenario(drivers={"d": {"kind": "quadratic"}}))
    assert err.pointer.startswith("/drivers/d/kind")
    err = _invalid(s2_scenario(surprise=1))
    assert err.pointer == "/surprise"
    err = _invalid(s2_scenario(oracles={"w": {"kind": "worst_case"}}))
    assert err.pointer.startswith("/oracles/w")
    err = _invalid(s2_scenario(processes={"p": {}}))
    assert err.pointer.startswith("/processes/p")
    assert _invalid([1, 2]).pointer == ""


def test_space_errors_point_at_nodes():
    nodes = [dict(n) for n in S2_SPEC["nodes"]]
    nodes[2]["p"] = 0.25
    err = _invalid(s2_scenario(nodes=nodes))
    assert err.pointer == "/nodes"
    assert err.detail["cause"] == "ProbabilityMismatch"


def test_payoff_shape_is_checked():
    err = _invalid(s2_scenario(payoffs={"q": [1.0, 2.0, 3.0]}))
    assert err.pointer == "/payoffs/q"


def test_bad_r_points_at_entry():
    sc = scenario_from_dict(s2_scenario(r={"half": 0.5, "wrong": [0.1, 0.2, 0.3]}))
    with pytest.raises(ScenarioInvalid) as info:
        sc.rmatrix("wrong")
    assert info.value.pointer == "/r/wrong"


def test_table_oracle_path_is_relative_to_scenario(tmp_path, scenario_file):
    table = {"entries": [{"q": [1.0, -1.0], "level": 1, "levels": [[0.5], [1.0, -1.0]]}]}
    (tmp_path / "table.json").write_text(json.dumps(table))
    sc = load_scenario(scenario_file(s2_scenario(oracles={"t": {"kind": "table", "path": "table.json"}})))
    oracle = sc.oracle("t")
    assert isinstance(oracle, TableOracle)
    assert oracle.cond(sc.payoff("q"), 0).values.tolist() == [0.5]


def test_unreadable_files(tmp_path):
    with pytest.raises(ScenarioInvalid):
        load_scenario(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ScenarioInvalid):
        load_scenario(str(bad))
