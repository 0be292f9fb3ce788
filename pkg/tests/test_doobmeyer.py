# tests/test_doobmeyer.py
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsdesvc.bsde import solve
from bsdesvc.doobmeyer import (
    OracleTrace,
    corollary_check,
    decompose_direct,
    default_schedule,
    dominated_check,
    drift_extract,
    er_dom_decompose,
    is_g_supermartingale,
    martingale_part,
    oracle_limit_check,
    penalization_limit_check,
    penalized_sequence,
)
from bsdesvc.drivers import RNormDriver, ZeroDriver
from bsdesvc.errors import BoundViolated, NegativeCompensator, NoConvergence, NotEMartingale
from bsdesvc.fuzz import balanced_r, g_supermartingale, random_payoff
from bsdesvc.gexp import er_process
from bsdesvc.martrep import davis_varaiya_basis
from bsdesvc.oracles import ClassicalOracle, ErOracle
from bsdesvc.probspace import AdaptedProcess, RandomVariable, random_space

SUPER = AdaptedProcess((np.array([1.0]), np.array([1.0, -1.0])))


def test_direct_compensator_on_s2(s2_basis, half_r):
    assert decompose_direct(ZeroDriver(s2_basis), SUPER).dA.at(1).tolist() == [1.0]
    dec = decompose_direct(RNormDriver(half_r), SUPER)
    assert dec.dA.at(1).tolist() == pytest.approx([0.5])
    assert dec.A.levels[1].tolist() == pytest.approx([0.5, 0.5])
    assert dec.reconstruction_error < 1e-12


def test_direct_rejects_submartingale_step(s2_basis):
    with pytest.raises(NegativeCompensator):
        decompose_direct(ZeroDriver(s2_basis), AdaptedProcess((np.array([-1.0]), np.array([1.0, -1.0]))))


def test_martingale_has_no_compensator(s2_basis, half_r):
    g = RNormDriver(half_r)
    Y = solve(g, RandomVariable(1, [1.0, -1.0])).Y
    dec = decompose_direct(g, Y)
    assert np.allclose(dec.dA.at(1), 0.0, atol=1e-12)
    trace = penalized_sequence(g, Y, schedule=[1.0, 4.0])
    assert all(row["gap"] < 1e-12 for row in trace.rows())


def test_supermartingale_check(s2_basis, half_r):
    assert is_g_supermartingale(ZeroDriver(s2_basis), SUPER).passed
    assert is_g_supermartingale(RNormDriver(half_r), SUPER).passed
    bad = is_g_supermartingale(ZeroDriver(s2_basis), AdaptedProcess((np.array([-1.0]), np.array([1.0, -1.0]))))
    assert not bad.passed
    assert bad.witness == {"s": 0, "t": 1, "node": 0}


def test_penalized_closed_form(half_r):
    trace = penalized_sequence(RNormDriver(half_r), SUPER, schedule=[1.0, 3.0])
    assert [row["Y0"] for row in trace.rows()] == pytest.approx([0.75, 0.875], abs=1e-14)
    assert trace.sandwich_ok
    for n in (7.0, 100.0):
        last = penalized_sequence(RNormDriver(half_r), SUPER, schedule=[n]).last
        assert last.Y.levels[0][0] == pytest.approx((0.5 + n) / (1 + n), abs=1e-14)


def test_penalization_limit_on_s2(half_r):
    g = RNormDriver(half_r)
    direct = decompose_direct(g, SUPER)
    trace = penalized_sequence(g, SUPER)
    assert trace.schedule == default_schedule()
    assert not trace.converged
    assert penalization_limit_check(g.basis.space, trace, direct).passed
    longer = penalized_sequence(g, SUPER, schedule=default_schedule(20))
    assert longer.limit_gap["Y"] < 1e-6
    assert longer.limit_gap["A"] < 1e-6
    with pytest.raises(NoConvergence):
        penalized_sequence(g, SUPER, schedule=[1.0], strict=True)


def test_corollary_split(half_r):
    g = RNormDriver(half_r)
    dec = decompose_direct(g, SUPER)
    M = martingale_part(g.basis.space, dec)
    assert M.levels[0].tolist() == [0.0]
    assert corollary_check(g, dec).passed


def test_drift_extract_recovers_norm(half_r):
    Y = er_process(half_r, RandomVariable(1, [1.0, -1.0]))
    out = drift_extract(ErOracle(half_r), half_r, Y)
    assert out.gpath.at(1).tolist() == pytest.approx([0.5])
    assert out.bound_slack <= 1e-12


def test_drift_extract_errors(half_r):
    Y = er_process(half_r, RandomVariable(1, [1.0, -1.0]))
    with pytest.raises(BoundViolated):
        drift_extract(ErOracle(half_r), half_r.scaled(0.5), Y)
    with pytest.raises(NotEMartingale):
        drift_extract(ErOracle(half_r), half_r, SUPER)


def test_dominated_route_matches_classical_doob(s2, half_r):
    A, trace = er_dom_decompose(ClassicalOracle(s2), half_r, SUPER, schedule=[])
    assert A.levels[1].tolist() == [1.0, 1.0]
    assert trace.oracle_calls > 0
    assert dominated_check(trace, SUPER).passed


def test_dominated_check_reports_its_defect():
    check = dominated_check(OracleTrace([], verify_error=0.5), SUPER, tol=1e-10)
    assert not check.passed
    assert check.worst == 0.5
    assert check.details["limit"] == pytest.approx(1e-10)


def test_dominated_route_penalized_trace(half_r):
    A, trace = er_dom_decompose(ErOracle(half_r), half_r, SUPER, schedule=[1.0, 3.0])
    assert A.levels[1].tolist() == pytest.approx([0.5, 0.5])
    assert [row["Y0"] for row in trace.rows] == pytest.approx([0.75, 0.875])
    check = oracle_limit_check(half_r.basis.space, trace, A)
    assert check.passed and not check.details["converged"]
    assert check.details["first_order"] == pytest.approx(0.125)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_penalization_on_fuzzed_supermartingales(seed):
    space = random_space(seed, 3, (2, 3), (0.1, 0.5))
    basis = davis_varaiya_basis(space)
    rng = np.random.default_rng(seed)
    g = RNormDriver(balanced_r(rng, basis))
    Y, push = g_supermartingale(rng, g, random_payoff(rng, space))
    direct = decompose_direct(g, Y)
    for k in range(1, 4):
        assert np.allclose(direct.dA.at(k), push[k - 1], atol=1e-10)
    assert is_g_supermartingale(g, Y).passed
    trace = penalized_sequence(g, Y, schedule=default_schedule(12))
    assert trace.sandwich_ok
    assert penalization_limit_check(space, trace, direct).passed
