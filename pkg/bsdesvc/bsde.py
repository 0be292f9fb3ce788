# bsdesvc/bsde.py
"""Scalar BSDE solver on the grid, driver checks and the comparison harness.

The backward step at step k and predictable atom a:
  1. Z(a) is the Kunita-Watanabe projection of Y_k - E[Y_k | a] on the basis;
  2. y = Y_{k-1}(a) solves y - g(k, a, y, Z(a)) dmu_k = E[Y_k | a].
Step 2 is closed form when the driver provides one and a bracketed brentq
solve otherwise.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq, minimize

from config import SETTINGS
from .errors import LevelOrder, MetadataMissing, RootFindFailure, Unsupported
from .martrep import IntegrandVector, MartingaleBasis, integrand_jump, m_norm_sq_level, project_increment
from .probspace import AdaptedProcess, PredictableProcess, RandomVariable
from .rmatrix import RMatrix

log = logging.getLogger(__name__)

STANDARD = "Standard"
SCALAR_EXTENSION_OK = "ScalarExtensionOK"
UNSUPPORTED = "Unsupported"

BALANCED = "Balanced"
NOT_CERTIFIED = "NotCertified"
INCONCLUSIVE = "Inconclusive"

HOLDS = "Holds"
VIOLATED = "Violated"
HYPOTHESIS_FAILS = "HypothesisFails"


# --------- drivers ----------

class Driver:
    """g(k, node, y, z) on the predictable atoms of a basis, with Lipschitz metadata.

    lip_y is c_t (scalar, or one entry per step with index 0 unused); lip_z is c,
    both in the squared form |g - g'|^2 <= c_t |y - y'|^2 + c ||z - z'||^2_M.
    A declared r promises |g(y, z) - g(y, z')| <= ||r (z - z')||_M.
    """

    name = "driver"
    zero_at_zero = False
    y_free = False
    z_free = False

    def __init__(self, basis: MartingaleBasis, lip_y: Any = None, lip_z: Optional[float] = None,
                 r: Optional[RMatrix] = None):
        self.basis = basis
        self.lip_y = lip_y
        self.lip_z = lip_z
        self.r = r

    def evaluate(self, k: int, node: int, y: float, z: np.ndarray) -> float:
        raise NotImplementedError

    def evaluate_level(self, k: int, y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.array([self.evaluate(k, a, float(y[a]), Z[a]) for a in range(len(y))])

    def solve_jump(self, k: int, m: np.ndarray, Z: np.ndarray, dmu: float) -> Optional[np.ndarray]:
        """Closed-form y with y - g(y, Z) dmu = m, or None when only a numeric solve is known."""
        if self.y_free:
            return m + self.evaluate_level(k, m, Z) * dmu
        return None

    def lip_y_at(self, k: int) -> float:
        if self.lip_y is None:
            raise MetadataMissing(f"driver {self.name!r} declares no y-Lipschitz bound")
        if np.isscalar(self.lip_y):
            return float(self.lip_y)
        return float(np.asarray(self.lip_y, dtype=float)[k])

    def metadata(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "lip_y": self.lip_y if self.lip_y is None or np.isscalar(self.lip_y) else list(np.asarray(self.lip_y, dtype=float)),
            "lip_z": self.lip_z,
            "zero_at_zero": self.zero_at_zero,
            "y_free": self.y_free,
            "z_free": self.z_free,
            "declared_r": None if self.r is None else self.r.describe(),
        }


class FunctionDriver(Driver):
    """Driver around a plain callable fn(k, node, y, z)."""

    def __init__(self, basis: MartingaleBasis, fn: Callable[[int, int, float, np.ndarray], float], *,
                 name: str = "function", lip_y: Any = None, lip_z: Optional[float] = None,
                 zero_at_zero: bool = False, y_free: bool = False, z_free: bool = False,
                 r: Optional[RMatrix] = None):
        super().__init__(basis, lip_y, lip_z, r)
        self.fn = fn
        self.name = name
        self.zero_at_zero = zero_at_zero
        self.y_free = y_free
        self.z_free = z_free

    def evaluate(self, k: int, node: int, y: float, z: np.ndarray) -> float:
        return float(self.fn(k, node, y, np.asarray(z, dtype=float)))


# --------- solution ----------

@dataclass(frozen=True)
class BsdeSolution:
    Y: AdaptedProcess
    Y_minus: PredictableProcess
    Z: IntegrandVector
    gvals: PredictableProcess
    residual: float
    driver: str = "driver"

    @property
    def horizon(self) -> int:
        return self.Y.horizon

    def value(self, k: int) -> RandomVariable:
        return self.Y.at(k)

    @property
    def Y0(self) -> float:
        return float(self.Y.levels[0][0])


def _bracket_constant(driver: Driver, k: int) -> float:
    cy = driver.lip_y_at(k) if driver.lip_y is not None else 1.0
    cz = driver.lip_z if driver.lip_z is not None else 0.0
    return max(cy, cz)


def _solve_node(driver: Driver, k: int, node: int, m: float, z: np.ndarray, dmu: float,
                c: float, shift: float, root_tol: float) -> float:
    def phi(y: float) -> float:
        return y - driver.evaluate(k, node, y, z) * dmu - m

    y0 = m + shift
    f0 = phi(y0)
    if f0 == 0.0:
        return y0
    R = (1.0 + c) * abs(f0) * 1.01 + 1e-12 * (1.0 + abs(m))
    for _ in range(64):
        lo, hi = y0 - R, y0 + R
        flo, fhi = phi(lo), phi(hi)
        if flo <= 0.0 <= fhi:
            break
        if flo > fhi:
            raise RootFindFailure(f"phi decreases on [{lo}, {hi}] at step {k}, node {node}",
                                  {"step": k, "node": node})
        R *= 2.0
    else:
        raise RootFindFailure(f"no sign change for phi at step {k}, node {node}", {"step": k, "node": node})
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    fmid = phi(0.5 * (lo + hi))
    if not (flo <= fmid <= fhi):
        raise RootFindFailure(f"phi is not monotone at step {k}, node {node}", {"step": k, "node": node})
    return float(brentq(phi, lo, hi, xtol=root_tol, rtol=4 * np.finfo(float).eps, maxiter=200))


def solve_jump_level(driver: Driver, k: int, m: np.ndarray, Zk: np.ndarray, *,
                     shift: float = 0.0, root_tol: Optional[float] = None) -> np.ndarray:
    """Y_{k-1} on every atom of step k from E[Y_k | atom] and Z."""
    dmu = float(driver.basis.space.dmu[k])
    if shift == 0.0:
        closed = driver.solve_jump(k, m, Zk, dmu)
        if closed is not None:
            return np.asarray(closed, dtype=float)
    root_tol = SETTINGS.root_tol if root_tol is None else root_tol
    c = _bracket_constant(driver, k)
    return np.array([_solve_node(driver, k, a, float(m[a]), Zk[a], dmu, c, shift, root_tol) for a in range(len(m))])


def solve(driver: Driver, Q: RandomVariable, *, classify: bool = False, tol: Optional[float] = None,
          bracket_shift: float = 0.0) -> BsdeSolution:
    """Backward induction from the terminal value Q at level Q.level."""
    basis = driver.basis
    sp = basis.space
    H = Q.level
    if H < 0 or H > sp.K or Q.values.shape[0] != sp.n(H):
        raise LevelOrder(f"terminal value sits at level {H} with {Q.values.shape[0]} entries")
    if classify:
        cls = check_standard(driver)
        if cls.kind == UNSUPPORTED:
            raise Unsupported(f"driver {driver.name!r} is not solvable: {cls.reason}", cls.as_dict())
    tol = SETTINGS.tol if tol is None else tol

    Y: List[np.ndarray] = [np.zeros(0)] * (H + 1)
    Zs: List[np.ndarray] = [np.zeros(0)] * H
    G: List[np.ndarray] = [np.zeros(0)] * H
    Y[H] = np.asarray(Q.values, dtype=float)
    for k in range(H, 0, -1):
        m = sp.one_step_mean(Y[k], k)
        Zk = project_increment(basis, k, Y[k] - sp.lift(m, k - 1, k))
        y = solve_jump_level(driver, k, m, Zk, shift=bracket_shift)
        Y[k - 1] = y
        Zs[k - 1] = Zk
        G[k - 1] = driver.evaluate_level(k, y, Zk)

    residual = 0.0
    dmu = sp.dmu
    for k in range(1, H + 1):
        back = sp.lift(Y[k - 1] - G[k - 1] * dmu[k], k - 1, k) + integrand_jump(basis, k, Zs[k - 1])
        residual = max(residual, float(np.max(np.abs(back - Y[k]))))
    if residual > tol * max(1.0, float(np.max(np.abs(Y[H]))) if Y[H].size else 1.0):
        log.warning("BSDE residual %.3e above tolerance for driver %s", residual, driver.name)
    return BsdeSolution(AdaptedProcess(tuple(Y)), PredictableProcess(tuple(Y[:H])), IntegrandVector(tuple(Zs)),
                        PredictableProcess(tuple(G)), residual, driver.name)


# --------- classification ----------

@dataclass
class Classification:
    kind: str
    offending: List[int] = field(default_factory=list)
    reason: str = ""
    audit: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "offending": self.offending, "reason": self.reason, "audit": self.audit}


def _sample_atom(rng: np.random.Generator, basis: MartingaleBasis):
    sp = basis.space
    k = int(rng.integers(1, sp.K + 1))
    a = int(rng.integers(0, sp.n(k - 1)))
    return k, a


def check_standard(driver: Driver, samples: Optional[int] = None, seed: Optional[int] = None) -> Classification:
    """Standard / ScalarExtensionOK / Unsupported, after auditing the declared bounds."""
    if driver.lip_y is None or driver.lip_z is None:
        raise MetadataMissing(f"driver {driver.name!r} lacks Lipschitz metadata")
    basis = driver.basis
    sp = basis.space
    samples = SETTINGS.samples if samples is None else samples
    rng = np.random.default_rng(SETTINGS.seed if seed is None else seed)

    worst = 0.0
    witness = None
    for _ in range(samples):
        k, a = _sample_atom(rng, basis)
        y1, y2 = rng.normal(scale=2.0, size=2)
        z1, z2 = rng.normal(size=basis.d), rng.normal(size=basis.d)
        lhs = (driver.evaluate(k, a, y1, z1) - driver.evaluate(k, a, y2, z2)) ** 2
        dz = z1 - z2
        rhs = driver.lip_y_at(k) * (y1 - y2) ** 2 + driver.lip_z * float(np.dot(dz * dz, basis.phi(k)[a]))
        ratio = lhs / rhs if rhs > 0 else (math.inf if lhs > 1e-24 else 0.0)
        if ratio > worst:
            worst, witness = ratio, {"step": k, "node": a, "y": [y1, y2]}
    audit = {"samples": samples, "worst_ratio": worst, "witness": witness}
    if worst > 1.0 + 1e-9:
        return Classification(UNSUPPORTED, [], "declared Lipschitz bounds fail on sampled points", audit)

    dmu = sp.dmu
    offending = [k for k in range(1, sp.K + 1) if driver.lip_y_at(k) * dmu[k] ** 2 >= 1.0]
    if not offending:
        return Classification(STANDARD, [], "", audit)

    c = max([driver.lip_y_at(k) for k in range(1, sp.K + 1)] + [driver.lip_z])
    ceiling = 1.0 - 1.0 / (1.0 + c)
    worst_slope = -math.inf
    for _ in range(samples):
        k = offending[int(rng.integers(0, len(offending)))]
        a = int(rng.integers(0, sp.n(k - 1)))
        y1, y2 = np.sort(rng.normal(scale=2.0, size=2))
        if y2 - y1 < 1e-9:
            continue
        z = rng.normal(size=basis.d)
        slope = (driver.evaluate(k, a, y2, z) - driver.evaluate(k, a, y1, z)) / (y2 - y1) * dmu[k]
        worst_slope = max(worst_slope, slope)
    audit["jump_slope_worst"] = worst_slope
    audit["jump_slope_ceiling"] = ceiling
    if worst_slope <= ceiling + 1e-12:
        return Classification(SCALAR_EXTENSION_OK, offending, "", audit)
    return Classification(UNSUPPORTED, offending, "jump monotonicity condition fails", audit)


# --------- balance ----------

@dataclass
class BalanceCertificate:
    status: str
    worst: float
    method: str
    exact: bool
    witness: Optional[Dict[str, Any]] = None

    @property
    def balanced(self) -> bool:
        return self.status == BALANCED

    def as_dict(self) -> Dict[str, Any]:
        return {"status": self.status, "worst": self.worst, "method": self.method, "exact": self.exact,
                "witness": self.witness}


def _diag_sup(dvals: np.ndarray, a: np.ndarray) -> float:
    """sup over the unit sphere of ||D v|| |a.v| for D = diag(dvals) >= 0.

    On the nonnegative orthant with x = v^2 the log of the objective is concave
    over the simplex, so a local maximum found from any start is global.
    """
    na = float(np.linalg.norm(a))
    if na == 0.0 or not np.any(dvals):
        return 0.0
    if np.allclose(dvals, dvals[0], rtol=0.0, atol=1e-15):
        return float(dvals[0]) * na
    d2 = dvals ** 2
    aa = np.abs(a)

    def neg(y: np.ndarray) -> float:
        return -float(np.dot(d2, y * y)) * float(np.dot(aa, y)) ** 2

    best = 0.0
    starts = [aa / na]
    j = int(np.argmax(dvals * aa))
    e = np.zeros_like(aa)
    e[j] = 1.0
    starts.append(0.5 * (e + aa / na) / np.linalg.norm(0.5 * (e + aa / na)))
    for y0 in starts:
        res = minimize(neg, y0, method="SLSQP", bounds=[(0.0, 1.0)] * len(aa),
                       constraints=[{"type": "eq", "fun": lambda y: float(np.dot(y, y)) - 1.0}],
                       options={"ftol": 1e-15, "maxiter": 500})
        y = np.clip(res.x, 0.0, None)
        y = y / max(np.linalg.norm(y), 1e-300)
        best = max(best, -neg(y))
    best = max(best, -neg(aa / na), float(np.max(d2 * aa * aa)))
    return math.sqrt(best)


def certify_r(r: RMatrix) -> BalanceCertificate:
    """Uniform balance of r: sup ||r u||_M |u dM| < 1 over unit u, every atom and child."""
    basis = r.basis
    sp = basis.space
    exact = r.is_diagonal
    worst, witness = 0.0, None
    for k in range(1, sp.K + 1):
        par = sp.parent(k)
        for a in range(sp.n(k - 1)):
            block, act = r.weighted_block(k, a)
            if act.size == 0:
                continue
            chs = np.flatnonzero(par == a)
            avec = basis.increments[k][np.ix_(chs, act)] / np.sqrt(basis.phi(k)[a, act])[None, :]
            if exact:
                dvals = np.abs(np.diag(block))
                vals = [_diag_sup(dvals, row) for row in avec]
            else:
                dn = float(np.linalg.norm(block, 2))
                vals = [dn * float(np.linalg.norm(row)) for row in avec]
            i = int(np.argmax(vals))
            if vals[i] > worst:
                worst, witness = float(vals[i]), {"step": k, "node": a, "child": int(chs[i])}
    if worst < 1.0:
        status = BALANCED
    else:
        status = NOT_CERTIFIED if exact else INCONCLUSIVE
    return BalanceCertificate(status, worst, "r-diagonal" if exact else "r-conservative", exact, witness)


def _sampled_balance(driver: Driver, samples: int, seed: int) -> BalanceCertificate:
    basis = driver.basis
    sp = basis.space
    rng = np.random.default_rng(seed)
    worst, witness = 0.0, None
    for _ in range(samples):
        k, a = _sample_atom(rng, basis)
        act = basis.active(k)[a]
        if not np.any(act):
            continue
        y = float(rng.normal())
        z1 = np.where(act, rng.normal(size=basis.d), 0.0)
        z2 = np.where(act, rng.normal(size=basis.d), 0.0)
        u = z1 - z2
        nsq = float(np.dot(u * u, basis.phi(k)[a]))
        if nsq <= 0.0:
            continue
        chs = np.flatnonzero(sp.parent(k) == a)
        jump = float(np.max(np.abs(basis.increments[k][chs] @ u)))
        ratio = abs(driver.evaluate(k, a, y, z1) - driver.evaluate(k, a, y, z2)) / nsq * jump
        if ratio > worst:
            worst, witness = ratio, {"step": k, "node": a}
    status = BALANCED if worst < 1.0 else NOT_CERTIFIED
    return BalanceCertificate(status, worst, "sampled", False, witness)


def check_balanced(driver: Driver, samples: Optional[int] = None, seed: Optional[int] = None) -> BalanceCertificate:
    if driver.z_free or driver.basis.d == 0:
        return BalanceCertificate(BALANCED, 0.0, "z-independent", True, None)
    samples = SETTINGS.samples if samples is None else samples
    seed = SETTINGS.seed if seed is None else seed
    if driver.r is not None:
        cert = certify_r(driver.r)
        if cert.balanced:
            return cert
        sampled = _sampled_balance(driver, samples, seed)
        if sampled.balanced:
            return sampled
        return cert if cert.exact else BalanceCertificate(INCONCLUSIVE, cert.worst, cert.method, False, cert.witness)
    return _sampled_balance(driver, samples, seed)


# --------- comparison ----------

@dataclass
class ComparisonVerdict:
    verdict: str
    witness: Optional[Dict[str, Any]] = None
    details: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {"verdict": self.verdict, "witness": self.witness, **self.details}


def compare(g: Driver, Q: RandomVariable, g2: Driver, Q2: RandomVariable, s: int = 0,
            tol: Optional[float] = None, certificate: Optional[BalanceCertificate] = None) -> ComparisonVerdict:
    """Solve both BSDEs and test Y >= Y' on [s, T], with strict propagation of equality."""
    sp = g.basis.space
    tol = SETTINGS.tol if tol is None else tol
    if s < 0 or s > Q.level:
        raise LevelOrder(f"comparison start {s} outside 0..{Q.level}")
    sol = solve(g, Q)
    sol2 = solve(g2, Q2)
    H = Q.level
    scale = max(1.0, float(np.max(np.abs(Q.values))), float(np.max(np.abs(Q2.values))))
    atol = tol * scale
    details: Dict[str, Any] = {"Y0": sol.Y0, "Y0_prime": sol2.Y0, "from": s}

    gap_T = Q.values - Q2.values
    if np.min(gap_T) < -atol:
        j = int(np.argmin(gap_T))
        return ComparisonVerdict(HYPOTHESIS_FAILS, {"hypothesis": "terminal", "outcome": sp.ids[H][j],
                                                     "gap": float(gap_T[j])}, details)
    for k in range(s + 1, H + 1):
        yk, zk = sol2.Y_minus.at(k), sol2.Z.at(k)
        diff = g.evaluate_level(k, yk, zk) - g2.evaluate_level(k, yk, zk)
        if diff.size and np.min(diff) < -atol:
            a = int(np.argmin(diff))
            return ComparisonVerdict(HYPOTHESIS_FAILS, {"hypothesis": "driver", "step": k,
                                                         "node": sp.ids[k - 1][a], "gap": float(diff[a])}, details)

    cert = certificate or check_balanced(g)
    details["certificate"] = cert.as_dict()
    if not cert.balanced:
        return ComparisonVerdict(INCONCLUSIVE, None, details)

    min_gap = math.inf
    for j in range(s, H + 1):
        gap = sol.Y.levels[j] - sol2.Y.levels[j]
        min_gap = min(min_gap, float(np.min(gap)))
        if np.min(gap) < -atol:
            a = int(np.argmin(gap))
            return ComparisonVerdict(VIOLATED, {"kind": "order", "level": j, "node": sp.ids[j][a],
                                                "gap": float(gap[a])}, details)
    details["min_gap"] = min_gap

    # equality on a node at level j forces equality on its whole subtree
    for j in range(s, H + 1):
        tied = np.abs(sol.Y.levels[j] - sol2.Y.levels[j]) <= atol
        if not np.any(tied):
            continue
        for later in range(j + 1, H + 1):
            anc = sp.ancestors(later, j)
            under = tied[anc]
            gap = np.abs(sol.Y.levels[later] - sol2.Y.levels[later])
            bad = np.flatnonzero(under & (gap > atol))
            if bad.size:
                b = int(bad[0])
                return ComparisonVerdict(VIOLATED, {"kind": "strictness", "tied_level": j,
                                                    "tied_node": sp.ids[j][int(anc[b])], "level": later,
                                                    "node": sp.ids[later][b], "gap": float(gap[b])}, details)
    return ComparisonVerdict(HOLDS, None, details)
