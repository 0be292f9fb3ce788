# tests/conftest.py
import json

import numpy as np
import pytest

from bsdesvc.martrep import davis_varaiya_basis
from bsdesvc.probspace import build_space, random_space
from bsdesvc.rmatrix import RMatrix

S2_SPEC = {
    "times": [0, 1],
    "mu": [0, 1],
    "nodes": [
        {"id": "root", "parent": None, "p": 1.0},
        {"id": "u", "parent": "root", "p": 0.5},
        {"id": "d", "parent": "root", "p": 0.5},
    ],
}

S3_SPEC = {
    "times": [0, 1, 2],
    "mu": [0, 1, 2],
    "nodes": [
        {"id": "root", "parent": None, "p": 1.0},
        {"id": "u", "parent": "root", "p": 0.5},
        {"id": "d", "parent": "root", "p": 0.5},
        {"id": "uu", "parent": "u", "p": 0.25},
        {"id": "ud", "parent": "u", "p": 0.25},
        {"id": "du", "parent": "d", "p": 0.25},
        {"id": "dd", "parent": "d", "p": 0.25},
    ],
}

TRI_SPEC = {
    "times": [0, 1],
    "mu": [0, 1],
    "nodes": [
        {"id": "root", "parent": None, "p": 1.0},
        {"id": "a", "parent": "root", "p": 1 / 3},
        {"id": "b", "parent": "root", "p": 1 / 3},
        {"id": "c", "parent": "root", "p": 1 / 3},
    ],
}


@pytest.fixture
def s2():
    return build_space(S2_SPEC)


@pytest.fixture
def s3():
    return build_space(S3_SPEC)


@pytest.fixture
def tri():
    return build_space(TRI_SPEC)


@pytest.fixture
def s2_basis(s2):
    return davis_varaiya_basis(s2)


@pytest.fixture
def s3_basis(s3):
    return davis_varaiya_basis(s3)


@pytest.fixture
def half_r(s2_basis):
    return RMatrix.from_param(s2_basis, 0.5)


@pytest.fixture
def fuzzed():
    space = random_space(11, 3, (2, 3), (0.2, 0.6))
    return space, davis_varaiya_basis(space)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def s2_scenario(**extra):
    """S2 scenario dict with the usual payoffs, drivers and oracles."""
    raw = {
        "schema": 1,
        **S2_SPEC,
        "payoffs": {"q": [1.0, -1.0], "q2": [0.0, -1.0], "wide": [4.0, 2.0]},
        "drivers": {
            "zero": {"kind": "zero"},
            "half": {"kind": "r_norm", "params": {"r": "half"}},
            "neg_half": {"kind": "neg_r_norm", "params": {"r": 0.5}},
            "decay": {"kind": "linear_y", "params": {"a": -1.0}},
        },
        "oracles": {
            "er": {"kind": "er", "r": "half"},
            "g_half": {"kind": "g", "driver": "half"},
        },
        "processes": {
            "super": {"levels": [[1.0], [1.0, -1.0]]},
            "mart": {"e_g": {"driver": "half", "payoff": "q"}},
        },
        "r": {"half": 0.5},
    }
    raw.update(extra)
    return raw


@pytest.fixture
def scenario_file(tmp_path):
    def write(raw=None, name="scenario.json"):
        path = tmp_path / name
        path.write_text(json.dumps(s2_scenario() if raw is None else raw))
        return str(path)
    return write
