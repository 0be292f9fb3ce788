# bsdesvc/gexp.py
"""Nonlinear expectations: E_g and E^{+-r}, the F-expectation axiom audit,
crossing counts and inequalities, and the bound checks for E_g.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import SETTINGS
from .bsde import BalanceCertificate, Driver, certify_r, check_balanced, solve
from .drivers import RNormDriver
from .errors import BadInterval, DriverNotAdmissible, LevelOrder, NotSubmartingale, RNotBalanced
from .martrep import IntegrandVector, m_norm_sq_level
from .oracles import ExpectationOracle
from .probspace import AdaptedProcess, FilteredSpace, RandomVariable
from .report import Check
from .rmatrix import RMatrix
from .stochcalc import doleans_exponential, integral_process

log = logging.getLogger(__name__)

REQUIRED_FOR_RECOVERY = ("constants", "monotonicity", "tower", "local", "translation", "domination")


# --------- expectations ----------

def g_expectation(driver: Driver, Q: RandomVariable, k: int,
                  certificate: Optional[BalanceCertificate] = None) -> RandomVariable:
    """E_g(Q | F_k) = Y_{t_k} of the BSDE with terminal value Q."""
    if not driver.zero_at_zero:
        raise DriverNotAdmissible(f"driver {driver.name!r} does not vanish at z = 0")
    cert = certificate or check_balanced(driver)
    if not cert.balanced:
        raise DriverNotAdmissible(f"driver {driver.name!r} is not certified balanced", cert.as_dict())
    if k < 0 or k > Q.level:
        raise LevelOrder(f"cannot condition a level-{Q.level} payoff on F_{k}")
    return solve(driver, Q).value(k)


def _balanced_r(r: RMatrix) -> BalanceCertificate:
    cert = certify_r(r)
    if not cert.balanced:
        raise RNotBalanced(f"r is not uniformly balanced (worst {cert.worst:.6g})", cert.as_dict())
    return cert


def er_expectation(r: RMatrix, Q: RandomVariable, k: int, sign: float = 1.0) -> RandomVariable:
    _balanced_r(r)
    if k < 0 or k > Q.level:
        raise LevelOrder(f"cannot condition a level-{Q.level} payoff on F_{k}")
    return solve(RNormDriver(r, sign), Q).value(k)


def er_process(r: RMatrix, Q: RandomVariable, sign: float = 1.0) -> AdaptedProcess:
    """E^{+-r}(Q | F_t) for every t up to Q's level, from a single backward pass."""
    _balanced_r(r)
    return solve(RNormDriver(r, sign), Q).Y


# --------- axiom audit ----------

@dataclass
class AxiomRow:
    name: str
    passed: bool = True
    worst: float = 0.0
    witness: Optional[Dict[str, Any]] = None
    informational: bool = False
    trials: int = 0

    def record(self, violation: float, witness: Dict[str, Any], tol: float) -> None:
        self.trials += 1
        if violation > self.worst:
            self.worst = float(violation)
            if violation > tol:
                self.witness = witness
        if violation > tol:
            self.passed = False

    def as_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "worst": self.worst, "witness": self.witness,
                "informational": self.informational, "trials": self.trials}


@dataclass
class AxiomReport:
    provenance: str
    rows: List[AxiomRow] = field(default_factory=list)
    samples: int = 0
    seed: int = 0

    def row(self, name: str) -> AxiomRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows if not r.informational)

    def failing(self, names: Sequence[str] = ()) -> List[str]:
        pool = [r for r in self.rows if not r.informational and (not names or r.name in names)]
        return [r.name for r in pool if not r.passed]

    def as_dict(self) -> Dict[str, Any]:
        return {"provenance": self.provenance, "passed": self.passed, "samples": self.samples,
                "seed": self.seed, "rows": [r.as_dict() for r in self.rows]}


def _rand_payoff(rng: np.random.Generator, space: FilteredSpace, level: Optional[int] = None) -> RandomVariable:
    lvl = space.K if level is None else level
    return RandomVariable(lvl, rng.normal(scale=float(rng.uniform(0.5, 2.0)), size=space.n(lvl)))


def _rand_event(rng: np.random.Generator, space: FilteredSpace, k: int) -> np.ndarray:
    ind = (rng.random(space.n(k)) < 0.5).astype(float)
    if space.n(k) > 1 and ind.all():
        ind[int(rng.integers(0, space.n(k)))] = 0.0
    return ind


def axioms_report(oracle: ExpectationOracle, r: Optional[RMatrix] = None,
                  samples: Optional[int] = None, seed: Optional[int] = None, tol: Optional[float] = None,
                  rows: Optional[Sequence[str]] = None) -> AxiomReport:
    """Sampled audit of the F-expectation axioms; seeds make every witness reproducible."""
    sp = oracle.space
    K = sp.K
    samples = SETTINGS.samples if samples is None else samples
    seed = SETTINGS.seed if seed is None else seed
    tol = SETTINGS.tol if tol is None else tol
    rng = np.random.default_rng(seed)
    E = oracle.cond

    names = ["constants", "monotonicity", "strict_monotonicity", "tower", "local", "zero_one", "translation",
             "convexity", "homogeneity", "additivity"]
    if r is not None:
        names += ["domination", "sandwich"]
    if rows is not None:
        names = [n for n in names if n in rows]
    report = AxiomReport(oracle.provenance, [AxiomRow(n, informational=(n == "additivity")) for n in names],
                         samples, seed)
    want = set(names)
    plus = minus = None
    if r is not None:
        _balanced_r(r)
        plus, minus = RNormDriver(r, 1.0), RNormDriver(r, -1.0)

    def scale(*arrs: np.ndarray) -> float:
        return tol * max([1.0] + [float(np.max(np.abs(a))) for a in arrs if np.size(a)])

    def worst_gap(diff: np.ndarray) -> Tuple[float, int]:
        i = int(np.argmax(diff))
        return float(diff[i]), i

    for trial in range(samples):
        X = _rand_payoff(rng, sp)
        Yv = _rand_payoff(rng, sp)
        k = int(rng.integers(0, K + 1))
        wit = {"trial": trial, "level": k}

        if "constants" in want:
            c = float(rng.normal(scale=3.0))
            got = E(RandomVariable(K, np.full(sp.n(K), c)), k).values
            v, i = worst_gap(np.abs(got - c))
            report.row("constants").record(v, {**wit, "c": c, "node": sp.ids[k][i]}, scale(np.array([c])))

        ex = E(X, k).values
        if "monotonicity" in want or "strict_monotonicity" in want:
            bump = _rand_event(rng, sp, K) * rng.uniform(0.5, 1.5)
            if not bump.any():
                bump[0] = 1.0
            Xb = RandomVariable(K, X.values + bump)
            eb = E(Xb, k).values
            if "monotonicity" in want:
                v, i = worst_gap(ex - eb)
                report.row("monotonicity").record(v, {**wit, "node": sp.ids[k][i]}, scale(ex, eb))
            if "strict_monotonicity" in want:
                e0, eb0 = E(X, 0).values[0], E(Xb, 0).values[0]
                # a strictly larger payoff must raise the root value
                report.row("strict_monotonicity").record(max(0.0, scale(ex) - (eb0 - e0)), {**wit, "gap": eb0 - e0}, 0.0)

        if "tower" in want and K > 0:
            s, t = sorted(int(x) for x in rng.integers(0, K + 1, size=2))
            inner = E(X, t)
            lhs = E(inner, s).values
            rhs = E(X, s).values
            v, i = worst_gap(np.abs(lhs - rhs))
            report.row("tower").record(v, {**wit, "s": s, "t": t, "node": sp.ids[s][i]}, scale(lhs, rhs))

        if "local" in want:
            A = _rand_event(rng, sp, k)
            lhs = E(RandomVariable(K, sp.lift(A, k, K) * X.values), k).values
            rhs = A * ex
            v, i = worst_gap(np.abs(lhs - rhs))
            report.row("local").record(v, {**wit, "node": sp.ids[k][i]}, scale(lhs, rhs))

        if "zero_one" in want:
            A = _rand_event(rng, sp, k)
            AK = sp.lift(A, k, K)
            lhs = E(RandomVariable(K, AK * X.values + (1.0 - AK) * Yv.values), k).values
            rhs = A * ex + (1.0 - A) * E(Yv, k).values
            v, i = worst_gap(np.abs(lhs - rhs))
            report.row("zero_one").record(v, {**wit, "node": sp.ids[k][i]}, scale(lhs, rhs))

        if "translation" in want:
            eta = rng.normal(size=sp.n(k))
            lhs = E(RandomVariable(K, X.values + sp.lift(eta, k, K)), k).values
            v, i = worst_gap(np.abs(lhs - ex - eta))
            report.row("translation").record(v, {**wit, "node": sp.ids[k][i]}, scale(lhs, ex))

        if "convexity" in want:
            lam = float(rng.uniform(0.1, 0.9))
            mix = E(RandomVariable(K, lam * X.values + (1 - lam) * Yv.values), k).values
            chord = lam * ex + (1 - lam) * E(Yv, k).values
            v, i = worst_gap(mix - chord)
            report.row("convexity").record(v, {**wit, "lambda": lam, "node": sp.ids[k][i]}, scale(mix, chord))

        if "homogeneity" in want:
            h = float(rng.uniform(0.2, 3.0))
            lhs = E(RandomVariable(K, h * X.values), k).values
            v, i = worst_gap(np.abs(lhs - h * ex))
            report.row("homogeneity").record(v, {**wit, "h": h, "node": sp.ids[k][i]}, scale(lhs, h * ex))

        if "additivity" in want:
            lhs = E(RandomVariable(K, X.values + Yv.values), k).values
            rhs = ex + E(Yv, k).values
            v, i = worst_gap(np.abs(lhs - rhs))
            report.row("additivity").record(v, {**wit, "node": sp.ids[k][i]}, scale(lhs, rhs))

        if plus is not None:
            upper = solve(plus, X).Y.levels[k]
            lower = solve(minus, X).Y.levels[k]
            if "domination" in want:
                eta = _rand_payoff(rng, sp)
                diff = E(RandomVariable(K, X.values + eta.values), k).values - E(eta, k).values
                v1, i1 = worst_gap(diff - upper)
                v2, i2 = worst_gap(lower - diff)
                v, i = (v1, i1) if v1 >= v2 else (v2, i2)
                report.row("domination").record(v, {**wit, "node": sp.ids[k][i], "side": "upper" if v1 >= v2 else "lower"},
                                                scale(diff, upper, lower))
            if "sandwich" in want:
                v1, i1 = worst_gap(ex - upper)
                v2, i2 = worst_gap(lower - ex)
                v, i = (v1, i1) if v1 >= v2 else (v2, i2)
                report.row("sandwich").record(v, {**wit, "node": sp.ids[k][i]}, scale(ex, upper, lower))

    failing = report.failing()
    if failing:
        log.info("axiom audit of %s oracle fails rows %s", oracle.provenance, failing)
    return report


def domination_audit(oracle: ExpectationOracle, r: RMatrix, samples: Optional[int] = None,
                     seed: Optional[int] = None, tol: Optional[float] = None) -> AxiomRow:
    return axioms_report(oracle, r=r, samples=samples, seed=seed, tol=tol, rows=["domination"]).row("domination")


# --------- crossings ----------

def crossings(path: Sequence[float], alpha: float, beta: float, up_to: Optional[int] = None) -> Tuple[int, int]:
    """Completed up- and downcrossings of [alpha, beta] by path[0..up_to]."""
    if not alpha < beta:
        raise BadInterval(f"crossing band [{alpha}, {beta}] is empty")
    vals = list(path) if up_to is None else list(path)[: up_to + 1]
    up = down = 0
    state = None
    for x in vals:
        if x <= alpha:
            if state == "high":
                down += 1
            state = "low"
        elif x >= beta:
            if state == "low":
                up += 1
            state = "high"
    return up, down


def crossing_counts(space: FilteredSpace, Y: AdaptedProcess, alpha: float, beta: float,
                    S: int) -> Tuple[np.ndarray, np.ndarray]:
    """Crossing counts as level-S random variables (one path per level-S node)."""
    ups = np.zeros(space.n(S))
    downs = np.zeros(space.n(S))
    for node in range(space.n(S)):
        path = [float(Y.levels[j][space.ancestors(S, j)[node]]) for j in range(S + 1)]
        ups[node], downs[node] = crossings(path, alpha, beta)
    return ups, downs


def is_er_submartingale(r: RMatrix, Y: AdaptedProcess, S: Optional[int] = None, tol: Optional[float] = None) -> Check:
    tol = SETTINGS.tol if tol is None else tol
    S = Y.horizon if S is None else S
    worst, witness = 0.0, None
    for t in range(1, S + 1):
        cond = er_process(r, RandomVariable(t, Y.levels[t]))
        for s in range(t):
            gap = Y.levels[s] - cond.levels[s]
            i = int(np.argmax(gap))
            if gap[i] > worst:
                worst, witness = float(gap[i]), {"s": s, "t": t, "node": i}
    scale = tol * max(1.0, max(float(np.max(np.abs(v))) for v in Y.levels[: S + 1]))
    return Check("er_submartingale", worst <= scale, worst, witness if worst > scale else None)


def crossing_inequality_check(r: RMatrix, Y: AdaptedProcess, alpha: float, beta: float,
                              S: Optional[int] = None, tol: Optional[float] = None) -> Check:
    """Crossing inequalities with E = E^r, evaluated exactly on the tree.

    The upcrossing inequality is asserted for every r. The downcrossing pair is
    asserted only when r vanishes; for r != 0 it fails already on one step
    (Y_0 >= beta, Y_1 below alpha on one branch), so it is reported as informational.
    """
    if not alpha < beta:
        raise BadInterval(f"crossing band [{alpha}, {beta}] is empty")
    tol = SETTINGS.tol if tol is None else tol
    sp = r.basis.space
    S = Y.horizon if S is None else S
    sub = is_er_submartingale(r, Y, S, tol)
    if not sub.passed:
        raise NotSubmartingale("process is not an E^r-submartingale", sub.witness)
    ups, downs = crossing_counts(sp, Y, alpha, beta, S)

    def E0(vals: np.ndarray) -> float:
        return float(er_process(r, RandomVariable(S, vals)).levels[0][0])

    YS = Y.levels[S]
    width = beta - alpha
    up_lhs = E0(ups)
    up_rhs = (E0(np.maximum(YS - alpha, 0.0)) - max(float(Y.levels[0][0]) - alpha, 0.0)) / width
    down_lhs = E0(downs)
    down_mid = -E0(-np.maximum(YS - beta, 0.0)) / width
    down_rhs = E0(np.maximum(YS - beta, 0.0)) / width
    slack = tol * max(1.0, abs(up_rhs), abs(down_rhs))
    classical = r.sup_d_norm() == 0.0
    down_viol = max(down_lhs - down_mid, down_mid - down_rhs)
    viol = max(up_lhs - up_rhs, down_viol) if classical else up_lhs - up_rhs
    return Check("crossing_inequality", viol <= slack, max(viol, 0.0), None,
                 {"up": {"lhs": up_lhs, "rhs": up_rhs},
                  "down": {"lhs": down_lhs, "mid": down_mid, "rhs": down_rhs,
                           "holds": down_viol <= slack, "informational": not classical},
                  "alpha": alpha, "beta": beta, "S": S})


# --------- bounds ----------

def girsanov_density(driver: Driver, sol) -> Tuple[IntegrandVector, AdaptedProcess]:
    """theta = g / ||Z||^2_M * Z (0 where ||Z||_M = 0) and Lambda = E(int theta dM)."""
    basis = driver.basis
    steps = []
    for k in range(1, sol.horizon + 1):
        Zk = np.asarray(sol.Z.at(k))
        nsq = m_norm_sq_level(basis, Zk, k)
        g = np.asarray(sol.gvals.at(k))
        coef = np.where(nsq > 0.0, g / np.where(nsq > 0.0, nsq, 1.0), 0.0)
        steps.append(np.where(basis.active(k), coef[:, None] * Zk, 0.0))
    theta = IntegrandVector(tuple(steps))
    return theta, doleans_exponential(basis.space, integral_process(theta, basis))


def norm_bound_check(driver: Driver, Q: RandomVariable, eps: Optional[float] = None,
                     tol: Optional[float] = None) -> Check:
    """|E_g(Q)| <= C_eps ||Q||_{1+eps} with C_eps = ||Lambda_T||_{1+1/eps}, and E_g(Q) = E[Lambda_T Q]."""
    eps = SETTINGS.eps if eps is None else eps
    tol = SETTINGS.tol if tol is None else tol
    sp = driver.basis.space
    sol = solve(driver, Q)
    _, Lam = girsanov_density(driver, sol)
    H = Q.level
    LT = Lam.levels[H]
    p = 1.0 + 1.0 / eps
    q = 1.0 + eps
    C = sp.expectation(np.abs(LT) ** p, H) ** (1.0 / p)
    qnorm = sp.expectation(np.abs(Q.values) ** q, H) ** (1.0 / q)
    y0 = sol.Y0
    girsanov_value = sp.expectation(LT * Q.values, H)
    scale = tol * max(1.0, float(np.max(np.abs(Q.values))) if Q.values.size else 1.0)
    identity_gap = abs(y0 - girsanov_value)
    bound_gap = abs(y0) - C * qnorm
    ok = identity_gap <= scale and bound_gap <= scale
    return Check("norm_bound", ok, max(identity_gap, bound_gap, 0.0), None,
                 {"Y0": y0, "C_eps": C, "eps": eps, "Q_norm": qnorm, "girsanov_value": girsanov_value,
                  "identity_gap": identity_gap, "lambda_T": LT.tolist(), "lambda_positive": bool(np.all(LT > 0))})


def growth_bound_check(r: RMatrix, Q: RandomVariable, k: int, tol: Optional[float] = None) -> Check:
    """E[E^r(Q|F_k)^2] <= E[Q^2] exp(sup ||r||_D^2 (mu_T - mu_k))."""
    tol = SETTINGS.tol if tol is None else tol
    sp = r.basis.space
    H = Q.level
    if k < 0 or k > H:
        raise LevelOrder(f"level {k} outside 0..{H}")
    Yk = er_expectation(r, Q, k).values
    lhs = sp.expectation(Yk ** 2, k)
    sup = 0.0
    for step in range(k + 1, H + 1):
        for a in range(sp.n(step - 1)):
            sup = max(sup, r.d_norm(step, a))
    horizon_mass = float(sp.grid.mu[H] - sp.grid.mu[k])
    rhs = sp.expectation(Q.values ** 2, H) * math.exp(sup * sup * horizon_mass)
    return Check("growth_bound", lhs <= rhs + tol * max(1.0, rhs), max(lhs - rhs, 0.0), None,
                 {"lhs": lhs, "rhs": rhs, "sup_d_norm": sup, "level": k})


def domination_sandwich_check(driver: Driver, r: RMatrix, Q: RandomVariable, tol: Optional[float] = None) -> Check:
    """E^{-r}(Q|F_t) <= E_g(Q|F_t) <= E^r(Q|F_t) at every level."""
    tol = SETTINGS.tol if tol is None else tol
    Yg = solve(driver, Q).Y
    up = er_process(r, Q, 1.0)
    lo = er_process(r, Q, -1.0)
    worst, witness = 0.0, None
    for t in range(Q.level + 1):
        gap = np.maximum(Yg.levels[t] - up.levels[t], lo.levels[t] - Yg.levels[t])
        i = int(np.argmax(gap))
        if gap[i] > worst:
            worst, witness = float(gap[i]), {"level": t, "node": i}
    scale = tol * max(1.0, float(np.max(np.abs(Q.values))))
    return Check("domination_sandwich", worst <= scale, worst, witness if worst > scale else None)
