# tests/test_suite.py
import json

import numpy as np

from bsdesvc.suite import run_suite, run_trial
from jobs.suite import main as suite_main

CORE = (
    "bsde_residual",
    "linear_reduction",
    "martingale_representation",
    "basis_orthogonality",
    "comparison",
    "comparison_strictness",
    "crossing_inequality",
    "jump_inversion",
    "exponential_equation",
    "gronwall_equality",
    "doob_meyer_direct",
    "penalization_sandwich",
    "drift_pairwise",
    "recover_verify",
    "norm_bound",
)


def test_suite_report_shape():
    result = run_suite(seed=0, trials=2, workers=1)
    out = result.as_dict()
    assert out["seed"] == 0 and out["trials"] == 2
    names = [row["name"] for row in out["checks"]]
    assert names == sorted(names)
    rows = {row["name"]: row for row in out["checks"]}
    for name in CORE:
        assert rows[name]["passed"], rows[name]
        assert rows[name]["runs"] >= 2
    assert "negative_control" in rows


def test_suite_is_reproducible():
    assert run_suite(seed=3, trials=1).as_dict() == run_suite(seed=3, trials=1).as_dict()


def test_workers_do_not_change_the_report():
    inline = run_suite(seed=5, trials=2, workers=1).as_dict()
    pooled = run_suite(seed=5, trials=2, workers=2).as_dict()
    assert inline == pooled


def test_single_trial_from_seed_sequence():
    child = np.random.SeedSequence(42).spawn(1)[0]
    checks = run_trial(child, 0)
    assert {c.name for c in checks} >= {"bsde_residual", "comparison", "crossing_inequality"}


def test_suite_job_writes_report(tmp_path):
    out = tmp_path / "suite.json"
    code = suite_main(["--seed", "1", "--trials", "1", "--quiet", "--output", str(out)])
    env = json.loads(out.read_bytes())
    assert code in (0, 1)
    assert env["echo"]["trials"] == 1
    assert env["data"]["passed"] == (code == 0)
