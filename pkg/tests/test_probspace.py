# tests/test_probspace.py
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsdesvc.errors import LevelOrder, NoStep, NonIncreasingClock, NonRefining, ParamsOutOfRange, ProbabilityMismatch, ZeroProbabilityAtom
from bsdesvc.probspace import (
    PredictableProcess,
    RandomVariable,
    build_space,
    conditional_expectation,
    random_space,
    space_spec,
    stieltjes_integral,
)
from conftest import S2_SPEC, S3_SPEC


def _with_nodes(spec, **changes):
    nodes = [dict(n) for n in spec["nodes"]]
    for nid, p in changes.items():
        for n in nodes:
            if n["id"] == nid:
                n["p"] = p
    return {**spec, "nodes": nodes}


def test_s2_shape(s2):
    assert s2.K == 1
    assert [s2.n(k) for k in range(2)] == [1, 2]
    assert s2.ids[1] == ("u", "d")
    assert np.allclose(s2.cond_prob(1), [0.5, 0.5])


def test_probability_mismatch():
    with pytest.raises(ProbabilityMismatch):
        build_space(_with_nodes(S2_SPEC, u=0.6, d=0.6))


def test_non_increasing_clock():
    spec = {**S3_SPEC, "mu": [0, 1, 1]}
    with pytest.raises(NonIncreasingClock):
        build_space(spec)


def test_zero_probability_atom():
    with pytest.raises(ZeroProbabilityAtom):
        build_space(_with_nodes(S2_SPEC, u=0.0, d=1.0))


def test_orphan_node_is_non_refining():
    spec = {**S2_SPEC, "nodes": S2_SPEC["nodes"] + [{"id": "x", "parent": "nowhere", "p": 0.1}]}
    with pytest.raises(NonRefining):
        build_space(spec)


def test_conditional_expectation_mean(s2):
    assert conditional_expectation(s2, RandomVariable(1, [1.0, 3.0]), 0).values.tolist() == [2.0]


def test_conditional_expectation_nested(s3):
    X = RandomVariable(2, [4.0, 0.0, 2.0, 2.0])
    assert conditional_expectation(s3, X, 1).values.tolist() == [2.0, 2.0]
    assert conditional_expectation(s3, X, 0).values.tolist() == [2.0]


def test_conditional_expectation_keeps_constants(s3):
    X = RandomVariable(2, np.full(4, 3.5))
    for k in range(3):
        assert np.allclose(conditional_expectation(s3, X, k).values, 3.5)


def test_conditional_expectation_level_order(s3):
    with pytest.raises(LevelOrder):
        conditional_expectation(s3, RandomVariable(1, [1.0, 2.0]), 2)


def test_stieltjes_total_mass():
    spec = {**S3_SPEC, "mu": [0, 0.5, 1]}
    space = build_space(spec)
    h = PredictableProcess.constant(space, 1.0)
    assert np.allclose(stieltjes_integral(space, h, 0, 2).values, 1.0)
    zero = PredictableProcess.constant(space, 0.0)
    assert np.allclose(stieltjes_integral(space, zero, 0, 2).values, 0.0)


def test_stieltjes_two_term_paths(s3):
    h = PredictableProcess((np.array([2.0]), np.array([3.0, 1.0])))
    assert stieltjes_integral(s3, h, 0, 2).values.tolist() == [5.0, 5.0, 3.0, 3.0]


def test_random_space_deterministic():
    a = random_space(7, 2, (2, 2))
    b = random_space(7, 2, (2, 2))
    assert a.n(2) == 4
    assert all(np.array_equal(x, y) for x, y in zip(a.probs, b.probs))
    assert a.grid == b.grid


def test_random_space_seeds_differ():
    a = random_space(7, 2, (2, 2))
    b = random_space(8, 2, (2, 2))
    assert any(not np.allclose(x, y) for x, y in zip(a.probs, b.probs))


def test_random_space_rejects_bad_params():
    with pytest.raises(NoStep):
        random_space(7, 0)
    with pytest.raises(ParamsOutOfRange):
        random_space(7, 2, (0, 2))


def test_space_spec_rebuilds_same_space(fuzzed):
    space, _ = fuzzed
    again = build_space(space_spec(space))
    assert again.ids == space.ids
    assert all(np.allclose(x, y) for x, y in zip(again.probs, space.probs))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), depth=st.integers(1, 4))
def test_tower_property(seed, depth):
    space = random_space(seed, depth, (1, 3))
    X = np.random.default_rng(seed).normal(size=space.n(depth))
    for t in range(depth + 1):
        inner = space.cond_values(X, depth, t)
        for s in range(t + 1):
            assert np.allclose(space.cond_values(inner, t, s), space.cond_values(X, depth, s), atol=1e-12)
    assert np.isclose(space.prob(depth).sum(), 1.0)
