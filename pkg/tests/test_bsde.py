# tests/test_bsde.py
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsdesvc.bsde import (
    BALANCED,
    HOLDS,
    HYPOTHESIS_FAILS,
    INCONCLUSIVE,
    NOT_CERTIFIED,
    SCALAR_EXTENSION_OK,
    STANDARD,
    UNSUPPORTED,
    VIOLATED,
    FunctionDriver,
    certify_r,
    check_balanced,
    check_standard,
    compare,
    solve,
)
from bsdesvc.drivers import LinearYDriver, RNormDriver, ZeroDriver
from bsdesvc.errors import LevelOrder, MetadataMissing, Unsupported
from bsdesvc.fuzz import balanced_r, ordered_pair, random_payoff, same_solution, tied_pair
from bsdesvc.martrep import davis_varaiya_basis
from bsdesvc.probspace import RandomVariable, random_space
from bsdesvc.rmatrix import RMatrix

Q_S2 = RandomVariable(1, [1.0, -1.0])


def test_zero_driver_is_conditional_expectation(s2_basis):
    sol = solve(ZeroDriver(s2_basis), Q_S2)
    assert sol.Y0 == 0.0
    assert np.allclose(sol.Z.at(1), [[1.0]])
    assert sol.residual == 0.0


def test_half_norm_driver(s2_basis, half_r):
    sol = solve(RNormDriver(half_r), Q_S2)
    assert sol.Y0 == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(sol.gvals.at(1), [0.5])


def test_linear_y_closed_form(s2_basis):
    sol = solve(LinearYDriver(s2_basis, -1.0), RandomVariable(1, [4.0, 2.0]), classify=True)
    assert sol.Y0 == pytest.approx(1.5, abs=1e-15)


def test_bracketed_solve_matches_fixed_point(s2_basis):
    g = FunctionDriver(s2_basis, lambda k, a, y, z: 0.5 * math.cos(y), name="cos", lip_y=0.25, lip_z=0.0,
                       z_free=True)
    sol = solve(g, Q_S2)
    y = sol.Y0
    assert y - 0.5 * math.cos(y) == pytest.approx(0.0, abs=1e-12)
    assert sol.residual < 1e-10
    assert same_solution(g, Q_S2, 3.0) < 1e-10


def test_solve_rejects_wrong_terminal_shape(s2_basis):
    with pytest.raises(LevelOrder):
        solve(ZeroDriver(s2_basis), RandomVariable(1, [1.0, 2.0, 3.0]))


def test_classification(s2_basis):
    assert check_standard(ZeroDriver(s2_basis)).kind == STANDARD
    decay = check_standard(LinearYDriver(s2_basis, -1.0))
    assert decay.kind == SCALAR_EXTENSION_OK
    assert decay.offending == [1]
    assert check_standard(LinearYDriver(s2_basis, 2.0)).kind == UNSUPPORTED
    with pytest.raises(Unsupported):
        solve(LinearYDriver(s2_basis, 2.0), Q_S2, classify=True)


def test_missing_metadata(s2_basis):
    with pytest.raises(MetadataMissing):
        check_standard(FunctionDriver(s2_basis, lambda k, a, y, z: 0.0))


def test_balance_on_s2(s2_basis):
    assert certify_r(RMatrix.from_param(s2_basis, 0.5)).status == BALANCED
    assert certify_r(RMatrix.from_param(s2_basis, 0.5)).worst == pytest.approx(0.5)
    assert certify_r(RMatrix.from_param(s2_basis, 1.5)).status == NOT_CERTIFIED
    assert check_balanced(LinearYDriver(s2_basis, 0.3)).worst == 0.0


def test_diagonal_balance_search(fuzzed):
    _, basis = fuzzed
    r = balanced_r(np.random.default_rng(5), basis, diagonal=True)
    cert = certify_r(r)
    assert cert.exact and cert.balanced
    assert 0.2 - 1e-6 <= cert.worst <= 0.9 + 1e-6


def test_comparison_linear_case(s2_basis):
    zero = ZeroDriver(s2_basis)
    verdict = compare(zero, Q_S2, zero, RandomVariable(1, [0.0, -1.0]))
    assert verdict.verdict == HOLDS
    assert verdict.details["Y0"] == 0.0
    assert verdict.details["Y0_prime"] == -0.5
    assert compare(zero, Q_S2, zero, Q_S2).verdict == HOLDS


def test_comparison_hypothesis_fails(s2_basis):
    zero = ZeroDriver(s2_basis)
    verdict = compare(zero, RandomVariable(1, [0.0, -1.0]), zero, Q_S2)
    assert verdict.verdict == HYPOTHESIS_FAILS
    assert verdict.witness["hypothesis"] == "terminal"


def test_comparison_without_balance_is_inconclusive(s2_basis):
    g = RNormDriver(RMatrix.from_param(s2_basis, 1.5))
    assert compare(g, Q_S2, g, RandomVariable(1, [0.0, -1.0])).verdict == INCONCLUSIVE


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), depth=st.integers(1, 4))
def test_residual_on_fuzzed_spaces(seed, depth):
    space = random_space(seed, depth, (1, 3))
    basis = davis_varaiya_basis(space)
    rng = np.random.default_rng(seed)
    Q = random_payoff(rng, space)
    drivers = [ZeroDriver(basis), LinearYDriver(basis, -0.5)]
    if basis.d:
        r = balanced_r(rng, basis)
        drivers += [RNormDriver(r), RNormDriver(r, -1.0)]
    scale = max(1.0, float(np.max(np.abs(Q.values))))
    for g in drivers:
        assert solve(g, Q).residual < 1e-10 * scale
    classical = solve(ZeroDriver(basis), Q).Y
    for k in range(depth + 1):
        assert np.max(np.abs(classical.levels[k] - space.cond_values(Q.values, depth, k))) < 1e-12 * scale


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_comparison_never_violated(seed):
    space = random_space(seed, 3, (2, 3))
    basis = davis_varaiya_basis(space)
    rng = np.random.default_rng(seed)
    r = balanced_r(rng, basis)
    Q, Q2 = ordered_pair(rng, space)
    verdict = compare(RNormDriver(r), Q, RNormDriver(r, -1.0), Q2)
    assert verdict.verdict == HOLDS


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_equality_on_a_node_propagates_forward(seed):
    space = random_space(seed, 3, (2, 3))
    basis = davis_varaiya_basis(space)
    rng = np.random.default_rng(seed)
    g = RNormDriver(balanced_r(rng, basis))
    Q, Q2, node = tied_pair(rng, space)
    verdict = compare(g, Q, g, Q2)
    assert verdict.verdict == HOLDS
    Y, Y2 = solve(g, Q).Y, solve(g, Q2).Y
    assert abs(Y.levels[1][node] - Y2.levels[1][node]) <= 1e-10
    for later in range(2, space.K + 1):
        under = space.ancestors(later, 1) == node
        assert np.max(np.abs(Y.levels[later][under] - Y2.levels[later][under])) <= 1e-10


def test_tie_with_gap_below_is_a_strictness_violation(s2_basis, half_r):
    # r = 1 makes E^r the maximum over the two children, so a root tie hides a gap at d
    g = RNormDriver(RMatrix.from_param(s2_basis, 1.0))
    cert = check_balanced(RNormDriver(half_r))
    assert cert.balanced
    verdict = compare(g, RandomVariable(1, [1.0, 0.0]), g, Q_S2, certificate=cert)
    assert verdict.verdict == VIOLATED
    assert verdict.witness["kind"] == "strictness"
    assert verdict.witness["tied_level"] == 0
    assert verdict.witness["node"] == "d"
    assert verdict.witness["gap"] == pytest.approx(1.0)
