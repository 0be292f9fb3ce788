# tests/test_martrep.py
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsdesvc.errors import DimensionMismatch, NotAMartingale
from bsdesvc.martrep import (
    IntegrandVector,
    chain_defect,
    davis_varaiya_basis,
    dump_basis,
    integrand_jump,
    isometry_check,
    m_norm_sq,
    orthogonality_defect,
    reconstruct,
    represent,
    seminorm_sq,
    span_dimensions,
)
from bsdesvc.probspace import AdaptedProcess, build_space, random_space


def test_s2_basis_is_unit_binary(s2_basis):
    assert s2_basis.d == 1
    assert np.allclose(np.abs(s2_basis.dM(1)[:, 0]), [1.0, 1.0])
    assert s2_basis.dM(1)[0, 0] == -s2_basis.dM(1)[1, 0]
    assert np.allclose(s2_basis.qv(0).at(1), [1.0])


def test_three_children_give_two_orthogonal_elements(tri):
    basis = davis_varaiya_basis(tri)
    assert basis.d == 2
    inc = basis.dM(1)
    assert abs(float(np.dot(tri.prob(1), inc[:, 0] * inc[:, 1]))) < 1e-12
    assert orthogonality_defect(basis) < 1e-12


def test_deterministic_space_has_no_basis():
    space = build_space({"times": [0, 1], "mu": [0, 1],
                         "nodes": [{"id": "r", "parent": None, "p": 1.0}, {"id": "x", "parent": "r", "p": 1.0}]})
    basis = davis_varaiya_basis(space)
    assert basis.d == 0
    Z = represent(basis, AdaptedProcess((np.array([3.0]), np.array([3.0]))))
    assert Z.at(1).shape == (1, 0)


def test_seminorm():
    assert seminorm_sq([2.0, 1.0], [1.0, 3.0]) == 7.0
    assert seminorm_sq([0.0, 0.0], [1.0, 3.0]) == 0.0
    assert seminorm_sq([0.0, 5.0], [1.0, 0.0]) == 0.0
    with pytest.raises(DimensionMismatch):
        seminorm_sq([1.0], [1.0, 2.0])


def test_m_norm_on_s2(s2_basis):
    assert m_norm_sq(s2_basis, np.array([2.0]), 1, 0) == 4.0


def test_represent_scalar_projection(s2_basis):
    N = AdaptedProcess((np.array([0.0]), np.array([2.0, -2.0])))
    Z = represent(s2_basis, N)
    assert np.allclose(np.abs(Z.at(1)), [[2.0]])
    const = represent(s2_basis, AdaptedProcess((np.array([1.0]), np.array([1.0, 1.0]))))
    assert np.allclose(const.at(1), 0.0)


def test_represent_rejects_drift(s2_basis):
    with pytest.raises(NotAMartingale):
        represent(s2_basis, AdaptedProcess((np.array([0.0]), np.array([1.0, 2.0]))))


def test_integrand_jump(s2_basis):
    jump = integrand_jump(s2_basis, 1, np.array([[1.0]]))
    assert np.allclose(np.abs(jump), [1.0, 1.0])
    assert jump[0] == -jump[1]
    assert np.allclose(integrand_jump(s2_basis, 1, np.array([[0.0]])), 0.0)


def test_isometry_on_s2(s2_basis):
    Z = IntegrandVector((np.array([[1.0]]),))
    out = isometry_check(s2_basis, Z)
    assert out["lhs"] == pytest.approx(1.0)
    assert out["l2_side"] == pytest.approx(1.0)
    assert out["equality_ok"]
    zero = isometry_check(s2_basis, IntegrandVector.zeros(s2_basis.space, 1))
    assert zero["lhs"] == 0.0 and zero["l2_side"] == 0.0


def test_dump_basis_is_stable(s3_basis):
    text = dump_basis(s3_basis)
    assert text.startswith("basis d=1 ")
    assert text == dump_basis(s3_basis)
    assert "child uu dM=" in text


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), depth=st.integers(1, 3))
def test_representation_round_trip(seed, depth):
    space = random_space(seed, depth, (1, 3))
    basis = davis_varaiya_basis(space)
    X = np.random.default_rng(seed).normal(size=space.n(depth))
    N = AdaptedProcess(tuple(space.cond_values(X, depth, k) for k in range(depth + 1)))
    back = reconstruct(basis, float(N.levels[0][0]), represent(basis, N))
    for a, b in zip(back.levels, N.levels):
        assert np.max(np.abs(a - b)) < 1e-10
    assert orthogonality_defect(basis) < 1e-10
    assert chain_defect(basis) == 0
    assert all(row["span"] == row["expected"] for row in span_dimensions(basis))
    assert isometry_check(basis, represent(basis, N))["equality_ok"]


UNEVEN_SPEC = {
    "times": [0, 1, 2],
    "mu": [0, 1, 2],
    "nodes": [
        {"id": "root", "parent": None, "p": 1.0},
        {"id": "A", "parent": "root", "p": 0.5},
        {"id": "B", "parent": "root", "p": 0.5},
        {"id": "a1", "parent": "A", "p": 0.25},
        {"id": "a2", "parent": "A", "p": 0.25},
        {"id": "b1", "parent": "B", "p": 1 / 6},
        {"id": "b2", "parent": "B", "p": 1 / 6},
        {"id": "b3", "parent": "B", "p": 1 / 6},
    ],
}


def test_uneven_tree_is_compacted_with_a_warning(caplog):
    # the greedy pass puts B's increments in slots 1 and 2
    with caplog.at_level(logging.WARNING, logger="bsdesvc.martrep"):
        basis = davis_varaiya_basis(build_space(UNEVEN_SPEC))
    assert basis.ordering == "compacted"
    assert basis.d == 2
    assert chain_defect(basis) == 0
    assert orthogonality_defect(basis) < 1e-12
    assert any(rec.levelno == logging.WARNING and "compacted" in rec.getMessage() for rec in caplog.records)
