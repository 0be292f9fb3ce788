# tests/test_cli.py
import json

import pytest

import gexpect
from conftest import s2_scenario
from gexpect import EXIT_CHECK, EXIT_OK, EXIT_USAGE


@pytest.fixture
def path(scenario_file):
    return scenario_file()


def _run(*argv):
    return gexpect.run(list(argv))


def test_solve(path):
    env, code, fmt = _run("solve", "--scenario", path, "--driver", "half", "--payoff", "q")
    assert code == EXIT_OK and fmt == "json"
    assert env["schema"] == 1
    assert env["data"]["Y0"] == pytest.approx(0.5)
    names = [c["name"] for c in env["data"]["checks"]]
    assert names == ["bsde_residual", "norm_bound", "domination_sandwich"]
    assert env["echo"]["driver"] == "half"
    assert "elapsed_s" in env["hint"]


def test_solve_zero_driver_reduces_to_conditional_mean(path):
    env, code, _ = _run("solve", "--scenario", path, "--driver", "zero", "--payoff", "wide")
    assert code == EXIT_OK
    assert env["data"]["Y0"] == 3.0
    assert "linear_reduction" in [c["name"] for c in env["data"]["checks"]]


def test_solve_decay_driver(path):
    env, code, _ = _run("solve", "--scenario", path, "--driver", "decay", "--payoff", "wide")
    assert code == EXIT_OK
    assert env["data"]["Y0"] == pytest.approx(1.5)
    assert env["data"]["classification"]["kind"] == "ScalarExtensionOK"


def test_compare(path):
    env, code, _ = _run("compare", "--scenario", path, "--driver", "half", "--payoff", "q",
                        "--driver2", "neg_half", "--payoff2", "q2")
    assert code == EXIT_OK
    assert env["data"]["verdict"] == "Holds"
    env, code, _ = _run("compare", "--scenario", path, "--driver", "zero", "--payoff", "q2", "--payoff2", "q")
    assert code == EXIT_CHECK
    assert env["data"]["verdict"] == "HypothesisFails"
    assert "error" not in env


def test_decompose_direct_with_penalization(path):
    env, code, _ = _run("decompose", "--scenario", path, "--process", "super", "--driver", "half",
                        "--penalized", "--schedule", "1,3")
    assert code == EXIT_OK
    data = env["data"]
    assert data["route"] == "direct"
    assert data["dA"][0].tolist() == pytest.approx([0.5])
    assert [row["Y0"] for row in data["penalization"]["trace"]] == pytest.approx([0.75, 0.875])


def test_decompose_dominated(path):
    env, code, _ = _run("decompose", "--scenario", path, "--process", "super", "--oracle", "er", "--r", "0.5",
                        "--schedule", "1,3")
    assert code == EXIT_OK
    assert env["data"]["route"] == "dominated"
    assert env["echo"]["r"] == 0.5
    assert env["data"]["g"][0].tolist() == pytest.approx([0.5])


def test_decompose_rejects_non_supermartingale(scenario_file):
    raw = s2_scenario(processes={"rising": {"levels": [[-1.0], [1.0, -1.0]]}})
    env, code, _ = _run("decompose", "--scenario", scenario_file(raw), "--process", "rising", "--driver", "zero")
    assert code == EXIT_CHECK
    assert env["error"].startswith("/decompose failed: NegativeCompensator")
    assert env["hint"]["step"] == 1


def test_recover_with_verification(path):
    env, code, _ = _run("recover", "--scenario", path, "--oracle", "er", "--r", "half", "--verify", "10",
                        "--samples", "20")
    assert code == EXIT_OK
    table = {(row["step"], row["node"], tuple(row["z"])): row["g"] for row in env["data"]["table"]}
    assert table[(1, "root", (2.0,))] == pytest.approx(1.0)
    assert [c["name"] for c in env["data"]["checks"]] == ["pairwise_bound", "representation", "uniqueness"]
    assert env["hint"]["oracle_calls"] > 0


def test_recover_unbalanced_r(path):
    env, code, _ = _run("recover", "--scenario", path, "--oracle", "er", "--r", "1.5")
    assert code == EXIT_CHECK
    assert env["error"].startswith("/recover failed: RNotBalanced")
    assert env["hint"]["code"] == "RNotBalanced"


def test_axioms(path):
    env, code, _ = _run("axioms", "--scenario", path, "--oracle", "er", "--r", "half", "--payoff", "q",
                        "--samples", "20")
    assert code == EXIT_OK
    rows = {c["name"]: c for c in env["data"]["checks"]}
    assert rows["additivity"]["informational"]
    assert rows["growth_bound"]["passed"]


def test_basis(path):
    env, code, _ = _run("basis", "--scenario", path)
    assert code == EXIT_OK
    assert env["data"]["d"] == 1


def test_schema_needs_no_scenario():
    env, code, _ = _run("schema")
    assert code == EXIT_OK
    assert "ScenarioModel" in env["data"]["components"]["schemas"]


@pytest.mark.parametrize("argv", [[], ["solve"], ["solve", "--scenario", "x.json"], ["bogus"]])
def test_usage_errors(argv):
    env, code, _ = gexpect.run(argv)
    assert code == EXIT_USAGE
    assert env["error"].startswith("usage:")
    assert "data" not in env


def test_missing_scenario_file(tmp_path):
    env, code, _ = _run("basis", "--scenario", str(tmp_path / "nope.json"))
    assert code == EXIT_USAGE
    assert env["error"].startswith("/basis failed: ScenarioInvalid")


def test_unknown_driver_is_a_usage_error(path):
    env, code, _ = _run("solve", "--scenario", path, "--driver", "ghost", "--payoff", "q")
    assert code == EXIT_USAGE
    assert env["hint"]["pointer"] == "/drivers/ghost"


def test_json_output(path, capsysbinary):
    assert gexpect.main(["solve", "--scenario", path, "--driver", "half", "--payoff", "q"]) == EXIT_OK
    env = json.loads(capsysbinary.readouterr().out)
    assert env["data"]["Y0"] == pytest.approx(0.5)
    assert list(env) == sorted(env)


def test_text_report_is_reproducible(path, capsysbinary):
    argv = ["recover", "--scenario", path, "--oracle", "er", "--r", "half", "--samples", "10", "--report", "text"]
    gexpect.main(argv)
    first = capsysbinary.readouterr().out
    gexpect.main(argv)
    second = capsysbinary.readouterr().out
    assert first == second
    assert b"elapsed_s" not in first
    assert b"data.passed: true" in first
