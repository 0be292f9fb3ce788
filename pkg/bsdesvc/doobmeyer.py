# bsdesvc/doobmeyer.py
"""Nonlinear Doob-Meyer decompositions.

Three routes to the compensator A of a supermartingale Y:
  - decompose_direct: one backward pass, exact on a finite tree;
  - penalized_sequence: drivers g + n (Y_{t-} - y)^+ with A^n = n int (Y - Y^n)^+ dmu;
  - er_dom_decompose: the same scheme driven only by oracle queries, for
    translation-invariant E^r-dominated expectations.
Why: the penalized paths are verification artifacts; their limit is checked
against the direct decomposition.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import SETTINGS
from .bsde import Driver, solve
from .drivers import PenalizedDriver
from .errors import (
    BoundViolated,
    NegativeCompensator,
    NoConvergence,
    NotEMartingale,
    OracleNotDominated,
    Unsupported,
)
from .martrep import IntegrandVector, integrand_jump, project_increment
from .oracles import ExpectationOracle
from .probspace import AdaptedProcess, FilteredSpace, PredictableProcess, RandomVariable
from .report import Check
from .rmatrix import RMatrix

log = logging.getLogger(__name__)

DEFAULT_MAX_POWER = 16


def default_schedule(max_power: int = DEFAULT_MAX_POWER) -> List[float]:
    return [float(2 ** i) for i in range(max_power + 1)]


def _cumulate(space: FilteredSpace, dA: Sequence[np.ndarray]) -> AdaptedProcess:
    """A_k on level k from predictable increments dA[k-1] on level k-1."""
    levels = [np.zeros(1)]
    for k in range(1, len(dA) + 1):
        levels.append(space.lift(levels[-1], k - 1, k) + space.lift(dA[k - 1], k - 1, k))
    return AdaptedProcess(tuple(levels))


def _scale(Y: AdaptedProcess) -> float:
    return max(1.0, max(float(np.max(np.abs(v))) for v in Y.levels))


@dataclass(frozen=True)
class Decomposition:
    Y: AdaptedProcess
    Z: IntegrandVector
    dA: PredictableProcess
    A: AdaptedProcess
    gpath: PredictableProcess
    reconstruction_error: float

    @property
    def Y0(self) -> float:
        return float(self.Y.levels[0][0])


# --------- supermartingale test ----------

def is_g_supermartingale(driver: Driver, Y: AdaptedProcess, tol: Optional[float] = None) -> Check:
    """Y_s >= E_g(Y_t | F_s) for all grid pairs s <= t."""
    tol = SETTINGS.tol if tol is None else tol
    worst, witness = 0.0, None
    for t in range(1, Y.horizon + 1):
        cond = solve(driver, Y.at(t)).Y
        for s in range(t):
            gap = cond.levels[s] - Y.levels[s]
            i = int(np.argmax(gap))
            if gap[i] > worst:
                worst, witness = float(gap[i]), {"s": s, "t": t, "node": i}
    limit = tol * _scale(Y)
    return Check("g_supermartingale", worst <= limit, worst, witness if worst > limit else None)


# --------- direct ----------

def decompose_direct(driver: Driver, Y: AdaptedProcess, tol: Optional[float] = None,
                     neg_tol: Optional[float] = None) -> Decomposition:
    basis = driver.basis
    sp = basis.space
    tol = SETTINGS.tol if tol is None else tol
    neg_tol = SETTINGS.neg_tol if neg_tol is None else neg_tol
    dmu = sp.dmu
    scale = _scale(Y)
    Zs, dA, G = [], [], []
    recon = 0.0
    for k in range(1, Y.horizon + 1):
        prev, cur = Y.levels[k - 1], Y.levels[k]
        m = sp.one_step_mean(cur, k)
        Zk = project_increment(basis, k, cur - sp.lift(m, k - 1, k))
        g = driver.evaluate_level(k, prev, Zk)
        inc = prev - m - g * dmu[k]
        if np.min(inc) < -neg_tol * scale:
            a = int(np.argmin(inc))
            raise NegativeCompensator(f"compensator decreases by {-inc[a]:.3e} at step {k}",
                                      {"step": k, "node": sp.ids[k - 1][a]})
        inc = np.maximum(inc, 0.0)
        back = sp.lift(prev - g * dmu[k] - inc, k - 1, k) + integrand_jump(basis, k, Zk)
        recon = max(recon, float(np.max(np.abs(back - cur))))
        Zs.append(Zk)
        dA.append(inc)
        G.append(g)
    if recon > tol * scale:
        log.warning("Doob-Meyer reconstruction error %.3e for driver %s", recon, driver.name)
    return Decomposition(Y, IntegrandVector(tuple(Zs)), PredictableProcess(tuple(dA)), _cumulate(sp, dA),
                         PredictableProcess(tuple(G)), recon)


def martingale_part(space: FilteredSpace, dec: Decomposition) -> AdaptedProcess:
    """M_t = -int g dmu + int Z dM, so that Y = Y_0 + M - A."""
    levels = [np.zeros(1)]
    A = dec.A
    for k in range(1, dec.Y.horizon + 1):
        # M_k - M_{k-1} = Y_k - Y_{k-1} + (A_k - A_{k-1})
        step = dec.Y.levels[k] - space.lift(dec.Y.levels[k - 1], k - 1, k) + (A.levels[k] - space.lift(A.levels[k - 1], k - 1, k))
        levels.append(space.lift(levels[-1], k - 1, k) + step)
    return AdaptedProcess(tuple(levels))


def corollary_check(driver: Driver, dec: Decomposition, tol: Optional[float] = None) -> Check:
    """For y-independent g the martingale part M is an E_g-martingale."""
    if not driver.y_free:
        raise Unsupported(f"driver {driver.name!r} depends on y; the split needs a y-independent driver")
    tol = SETTINGS.tol if tol is None else tol
    sp = driver.basis.space
    M = martingale_part(sp, dec)
    H = M.horizon
    cond = solve(driver, M.at(H)).Y
    worst, witness = 0.0, None
    for t in range(H + 1):
        gap = np.abs(cond.levels[t] - M.levels[t])
        i = int(np.argmax(gap))
        if gap[i] > worst:
            worst, witness = float(gap[i]), {"level": t, "node": i}
    limit = tol * _scale(dec.Y)
    return Check("corollary_split", worst <= limit, worst, witness if worst > limit else None)


# --------- penalization ----------

@dataclass
class PenaltyStep:
    n: float
    Y: AdaptedProcess
    Z: IntegrandVector
    A: AdaptedProcess
    gap: float
    a_sq: float
    z_sq: float

    def row(self) -> Dict[str, Any]:
        return {"n": self.n, "gap": self.gap, "Y0": float(self.Y.levels[0][0]),
                "A_T_mean_sq": self.a_sq, "Z_h2": self.z_sq}


@dataclass
class PenalizationTrace:
    schedule: List[float]
    steps: List[PenaltyStep] = field(default_factory=list)
    base: Optional[AdaptedProcess] = None
    sandwich_ok: bool = True
    sandwich_witness: Optional[Dict[str, Any]] = None
    converged: bool = False
    bounded: bool = True
    limit_gap: Dict[str, float] = field(default_factory=dict)

    @property
    def last(self) -> PenaltyStep:
        return self.steps[-1]

    def rows(self) -> List[Dict[str, Any]]:
        return [s.row() for s in self.steps]

    def as_dict(self) -> Dict[str, Any]:
        return {"schedule": self.schedule, "trace": self.rows(), "sandwich_ok": self.sandwich_ok,
                "sandwich_witness": self.sandwich_witness, "converged": self.converged,
                "bounded": self.bounded, "limit_gap": self.limit_gap}


def _penalty_compensator(space: FilteredSpace, Y: AdaptedProcess, Yn: AdaptedProcess, n: float) -> AdaptedProcess:
    dmu = space.dmu
    dA = [n * np.maximum(Y.levels[k - 1] - Yn.levels[k - 1], 0.0) * dmu[k] for k in range(1, Y.horizon + 1)]
    return _cumulate(space, dA)


def _sup_gap(X: AdaptedProcess, Y: AdaptedProcess) -> float:
    return max(float(np.max(np.abs(a - b))) for a, b in zip(X.levels, Y.levels))


def _order_violation(lo: AdaptedProcess, hi: AdaptedProcess) -> Tuple[float, Optional[Dict[str, int]]]:
    worst, where = 0.0, None
    for k, (a, b) in enumerate(zip(lo.levels, hi.levels)):
        gap = a - b
        i = int(np.argmax(gap))
        if gap[i] > worst:
            worst, where = float(gap[i]), {"level": k, "node": i}
    return worst, where


def _z_h2(basis, Z: IntegrandVector) -> float:
    sp = basis.space
    return sum(float(np.dot(sp.prob(k - 1), np.einsum("ij,ij->i", np.asarray(Z.at(k)) ** 2, basis.dqv[k - 1])))
               for k in range(1, Z.horizon + 1))


def penalized_sequence(driver: Driver, Y: AdaptedProcess, schedule: Optional[Sequence[float]] = None,
                       tol: Optional[float] = None, strict: bool = False) -> PenalizationTrace:
    """Solve the f^n-BSDEs along the schedule and track the sandwich Y^0 <= Y^n <= Y^{n+1} <= Y."""
    basis = driver.basis
    sp = basis.space
    tol = SETTINGS.tol if tol is None else tol
    schedule = default_schedule() if schedule is None else [float(n) for n in schedule]
    direct = decompose_direct(driver, Y)
    H = Y.horizon
    YT = Y.at(H)
    trace = PenalizationTrace(list(schedule))
    trace.base = solve(driver, YT).Y
    order_tol = tol * _scale(Y)
    prev = trace.base
    A_true = direct.A
    a_true = sp.expectation(A_true.levels[H] ** 2, H)
    z_true = _z_h2(basis, direct.Z)

    def note(lo: AdaptedProcess, hi: AdaptedProcess, label: str, n: float) -> None:
        v, where = _order_violation(lo, hi)
        if v > order_tol and trace.sandwich_ok:
            trace.sandwich_ok = False
            trace.sandwich_witness = {"pair": label, "n": n, "gap": v, **(where or {})}

    note(trace.base, Y, "Y0<=Y", 0.0)
    for n in schedule:
        sol = solve(PenalizedDriver(driver, Y, n), YT)
        A = _penalty_compensator(sp, Y, sol.Y, n)
        step = PenaltyStep(n, sol.Y, sol.Z, A, _sup_gap(Y, sol.Y), sp.expectation(A.levels[H] ** 2, H),
                           _z_h2(basis, sol.Z))
        trace.steps.append(step)
        note(prev, sol.Y, "Yn<=Yn+1", n)
        note(sol.Y, Y, "Yn<=Y", n)
        prev = sol.Y
        if step.gap < tol:
            trace.converged = True
            break

    sup_a = max(s.a_sq for s in trace.steps) if trace.steps else 0.0
    sup_z = max(s.z_sq for s in trace.steps) if trace.steps else 0.0
    trace.bounded = sup_a <= 2.0 * a_true + 1.0 and sup_z <= 2.0 * z_true + 1.0
    if trace.steps:
        last = trace.last
        dZ = IntegrandVector(tuple(np.asarray(a) - np.asarray(b) for a, b in zip(last.Z.steps, direct.Z.steps)))
        trace.limit_gap = {"Y": last.gap, "A": _sup_gap(last.A, A_true), "Z_h2": _z_h2(basis, dZ) ** 0.5}
    if not trace.converged:
        log.warning("penalization stopped at n=%s with gap %.3e above tol %.1e",
                    trace.steps[-1].n if trace.steps else None, trace.steps[-1].gap if trace.steps else float("nan"), tol)
        if strict:
            raise NoConvergence("penalization schedule ended above tolerance", {"limit_gap": trace.limit_gap})
    if not trace.bounded:
        log.warning("penalization bounds grew along the schedule: sup E[A_T^2]=%.3e sup E[int Z^2 d<M>]=%.3e",
                    sup_a, sup_z)
    return trace


# --------- oracle-driven routes ----------

@dataclass(frozen=True)
class DriftExtraction:
    gpath: PredictableProcess
    Z: IntegrandVector
    bound_slack: float


def drift_extract(oracle: ExpectationOracle, r: RMatrix, Y: AdaptedProcess, tol: Optional[float] = None) -> DriftExtraction:
    """Recover (g_u, Z) from an E-martingale: Y_T = Y_t - int g dmu + int Z dM."""
    basis = r.basis
    sp = basis.space
    tol = SETTINGS.tol if tol is None else tol
    H = Y.horizon
    scale = _scale(Y)
    YT = Y.at(H)
    for t in range(H):
        got = oracle.cond(YT, t).values
        gap = np.abs(got - Y.levels[t])
        if np.max(gap) > tol * scale:
            i = int(np.argmax(gap))
            raise NotEMartingale(f"Y_{t} differs from E(Y_T|F_{t}) by {gap[i]:.3e}", {"level": t, "node": sp.ids[t][i]})
    dmu = sp.dmu
    Zs, G = [], []
    slack = -np.inf
    for k in range(1, H + 1):
        m = sp.one_step_mean(Y.levels[k], k)
        Zk = project_increment(basis, k, Y.levels[k] - sp.lift(m, k - 1, k))
        g = (Y.levels[k - 1] - m) / dmu[k]
        excess = np.abs(g) - r.norm_level(k, Zk)
        slack = max(slack, float(np.max(excess)))
        if np.max(excess) > tol * scale:
            a = int(np.argmax(excess))
            raise BoundViolated(f"|g| exceeds ||r Z||_M by {excess[a]:.3e} at step {k}",
                                {"step": k, "node": sp.ids[k - 1][a]})
        Zs.append(Zk)
        G.append(g)
    return DriftExtraction(PredictableProcess(tuple(G)), IntegrandVector(tuple(Zs)), slack if H else 0.0)


@dataclass
class OracleTrace:
    schedule: List[float]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    converged: bool = False
    oracle_calls: int = 0
    verify_error: float = 0.0

    def as_dict(self) -> Dict[str, Any]:
        return {"schedule": self.schedule, "trace": self.rows, "converged": self.converged,
                "oracle_calls": self.oracle_calls, "verify_error": self.verify_error}


def _penalized_oracle_step(oracle: ExpectationOracle, space: FilteredSpace, k: int, Ynk: np.ndarray,
                           ybar: np.ndarray, w: float, contraction: float, budget: int, root_tol: float,
                           tol: float) -> Tuple[np.ndarray, int]:
    """y = E(Y^n_k + w (Ybar - y)^+ | F_{k-1}) with w = n dmu_k."""
    calls = 0

    def E(extra: np.ndarray) -> np.ndarray:
        nonlocal calls
        calls += 1
        if calls > budget:
            raise NoConvergence(f"oracle budget of {budget} calls exhausted at step {k}", {"step": k})
        return oracle.cond(RandomVariable(k, Ynk + space.lift(extra, k - 1, k)), k - 1).values

    if w < contraction:
        y = E(np.zeros(space.n(k - 1)))
        while True:
            nxt = E(w * np.maximum(ybar - y, 0.0))
            done = np.max(np.abs(nxt - y)) <= root_tol * max(1.0, float(np.max(np.abs(nxt))))
            y = nxt
            if done:
                break
    else:
        m = E(np.zeros(space.n(k - 1)))
        y = np.maximum(m, (m + w * ybar) / (1.0 + w))
    resid = np.abs(y - E(w * np.maximum(ybar - y, 0.0)))
    if np.max(resid) > tol * max(1.0, float(np.max(np.abs(y)))):
        a = int(np.argmax(resid))
        raise OracleNotDominated(f"penalized step equation fails by {resid[a]:.3e} at step {k}",
                                 {"step": k, "node": space.ids[k - 1][a]})
    return y, calls


def er_dom_decompose(oracle: ExpectationOracle, r: RMatrix, Y: AdaptedProcess,
                     schedule: Optional[Sequence[float]] = None, tol: Optional[float] = None,
                     budget: Optional[int] = None) -> Tuple[AdaptedProcess, OracleTrace]:
    """Compensator A with Y + A an E-martingale, plus the penalized oracle trace."""
    sp = r.basis.space
    tol = SETTINGS.tol if tol is None else tol
    budget = SETTINGS.oracle_budget if budget is None else budget
    schedule = default_schedule() if schedule is None else [float(n) for n in schedule]
    H = Y.horizon
    scale = _scale(Y)
    start = oracle.calls

    dA = []
    for k in range(1, H + 1):
        inc = Y.levels[k - 1] - oracle.cond(Y.at(k), k - 1).values
        if np.min(inc) < -SETTINGS.neg_tol * scale:
            a = int(np.argmin(inc))
            raise NegativeCompensator(f"Y is not an E-supermartingale at step {k}", {"step": k, "node": sp.ids[k - 1][a]})
        dA.append(np.maximum(inc, 0.0))
    A = _cumulate(sp, dA)

    # Y + A must reproduce itself through the oracle
    target = RandomVariable(H, Y.levels[H] + A.levels[H])
    verify = 0.0
    for t in range(H):
        gap = np.abs(oracle.cond(target, t).values - (Y.levels[t] + A.levels[t]))
        verify = max(verify, float(np.max(gap)))
    if verify > tol * scale:
        raise OracleNotDominated(f"Y + A is not an E-martingale (defect {verify:.3e})", {"defect": verify})

    trace = OracleTrace(list(schedule), verify_error=verify)
    dmu = sp.dmu
    for n in schedule:
        Yn = [np.zeros(0)] * (H + 1)
        Yn[H] = np.asarray(Y.levels[H], dtype=float)
        for k in range(H, 0, -1):
            Yn[k - 1], _ = _penalized_oracle_step(oracle, sp, k, Yn[k], Y.levels[k - 1], n * dmu[k],
                                                   SETTINGS.contraction, budget, SETTINGS.root_tol, tol)
        Yn_proc = AdaptedProcess(tuple(Yn))
        An = _penalty_compensator(sp, Y, Yn_proc, n)
        gap = _sup_gap(Y, Yn_proc)
        trace.rows.append({"n": n, "gap": gap, "Y0": float(Yn[0][0]), "A_gap": _sup_gap(An, A)})
        if gap < tol:
            trace.converged = True
            break
    trace.oracle_calls = oracle.calls - start
    if schedule and not trace.converged:
        log.warning("oracle penalization ended above tolerance after %d oracle calls", trace.oracle_calls)
    return A, trace


def _first_order(space: FilteredSpace, dA: Sequence[np.ndarray], n: float) -> float:
    dmu = space.dmu
    return sum(float(np.max(dA[k - 1])) / (1.0 + n * dmu[k]) for k in range(1, len(dA) + 1))


def penalization_limit_check(space: FilteredSpace, trace: PenalizationTrace, direct: Decomposition,
                             tol: float = 1e-6) -> Check:
    """Terminal (Y^n, A^n) against the direct decomposition, allowing the first-order gap dA / (1 + n dmu).

    Errors carried back through later steps add at most one first-order term per step.
    """
    if not trace.steps:
        return Check("penalization_limit", True, 0.0, None, {"steps": 0})
    n = trace.last.n
    first_order = _first_order(space, direct.dA.steps, n)
    allowed = tol + (direct.Y.horizon + 1) * first_order
    worst = max(trace.limit_gap.get("Y", 0.0), trace.limit_gap.get("A", 0.0))
    return Check("penalization_limit", worst <= allowed, worst, None if worst <= allowed else {"n": n},
                 {"allowed": allowed, "first_order": first_order, "n": n, "limit_gap": trace.limit_gap})


def dominated_check(trace: OracleTrace, Y: AdaptedProcess, tol: Optional[float] = None) -> Check:
    """Y + A reproduces itself through the oracle, up to tol scaled by |Y|."""
    tol = SETTINGS.tol if tol is None else tol
    limit = tol * _scale(Y)
    return Check("dominated_decomposition", trace.verify_error <= limit, trace.verify_error, None,
                 {"limit": limit})


def oracle_limit_check(space: FilteredSpace, trace: OracleTrace, A: AdaptedProcess, tol: float = 1e-6) -> Check:
    """Same allowance for the oracle-driven trace, measured against the compensator A."""
    if not trace.rows:
        return Check("oracle_penalization", True, 0.0, None, {"steps": 0})
    last = trace.rows[-1]
    n = last["n"]
    dA = [A.levels[k] - space.lift(A.levels[k - 1], k - 1, k) for k in range(1, A.horizon + 1)]
    first_order = _first_order(space, dA, n)
    allowed = tol + (A.horizon + 1) * first_order
    worst = max(last["gap"], last["A_gap"])
    ok = trace.converged or worst <= allowed
    return Check("oracle_penalization", ok, worst, None if ok else {"n": n},
                 {"allowed": allowed, "first_order": first_order, "n": n, "converged": trace.converged})
