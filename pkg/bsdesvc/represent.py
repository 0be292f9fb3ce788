# bsdesvc/represent.py
"""Driver recovery for translation-invariant, E^r-dominated expectations.

One-step mode: for a predictable atom a at step k and a vector z,
    g(z; k, a) = E(z . dM_k | F_{k-1})(a) / dmu_k,
the g dmu term being pulled out of the conditional value by translation
invariance. A single oracle call answers every atom of the step at once.

Global mode runs the forward process dY = -||r Z|| dmu + Z dM, the dominated
Doob-Meyer decomposition and drift extraction, and must agree with the
one-step values.
"""
from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import SETTINGS
from .bsde import Driver, certify_r, solve
from .doobmeyer import drift_extract, er_dom_decompose
from .errors import DominationViolated, OracleAuditFailed, RNotBalanced
from .gexp import REQUIRED_FOR_RECOVERY, axioms_report, domination_audit
from .martrep import IntegrandVector, MartingaleBasis, integrand_jump
from .oracles import ExpectationOracle
from .probspace import AdaptedProcess, RandomVariable
from .report import Check
from .rmatrix import RMatrix

log = logging.getLogger(__name__)

PAIR_CAP = 64
RANDOM_DIRECTIONS = 20


class RecoveredDriver(Driver):
    """y-independent driver answered lazily from oracle queries, memoized by (k, atom, quantized z)."""

    name = "recovered"
    zero_at_zero = True
    y_free = True

    def __init__(self, oracle: ExpectationOracle, r: RMatrix, digits: Optional[int] = None,
                 tol: Optional[float] = None):
        sup = r.sup_d_norm()
        super().__init__(r.basis, lip_y=0.0, lip_z=sup * sup, r=r)
        self.oracle = oracle
        self.digits = SETTINGS.quant_digits if digits is None else digits
        self.tol = SETTINGS.tol if tol is None else tol
        self.cache: Dict[Tuple[int, int, Tuple[float, ...]], float] = {}
        self._pairs: Dict[Tuple[int, int], List[Tuple[np.ndarray, float]]] = {}
        self._lock = threading.Lock()
        self.queries = 0
        self.pair_worst = 0.0
        self.pair_violations = 0
        self.report: Dict[str, Any] = {}

    def _key(self, k: int, node: int, z: np.ndarray) -> Tuple[int, int, Tuple[float, ...]]:
        act = self.basis.active(k)[node]
        zq = np.round(np.where(act, z, 0.0), self.digits) + 0.0
        return (k, node, tuple(zq.tolist()))

    def _store(self, key, z: np.ndarray, g: float) -> None:
        k, node, _ = key
        bound = self.r.norm(k, node, z)
        if abs(g) > bound + self.tol * max(1.0, bound):
            raise DominationViolated(f"|g(z)| = {abs(g):.6g} exceeds ||r z||_M = {bound:.6g} at step {k}",
                                     {"step": k, "node": self.basis.space.ids[k - 1][node], "z": z.tolist()})
        with self._lock:
            self.cache[key] = g
            seen = self._pairs.setdefault((k, node), [])
            for z2, g2 in seen:
                lip = self.r.norm(k, node, z - z2)
                diff = abs(g - g2)
                if diff > lip + self.tol * max(1.0, lip):
                    self.pair_violations += 1
                if lip > 0:
                    self.pair_worst = max(self.pair_worst, diff / lip)
            if len(seen) < PAIR_CAP:
                seen.append((z.copy(), g))

    def query_level(self, k: int, Z: np.ndarray) -> np.ndarray:
        """g(Z[a]; k, a) for every atom a of step k, from one oracle call."""
        sp = self.basis.space
        X = integrand_jump(self.basis, k, Z)
        with self._lock:
            self.queries += 1
        cond = self.oracle.cond(RandomVariable(k, X), k - 1).values
        return cond / sp.dmu[k]

    def evaluate_level(self, k: int, y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        n = Z.shape[0]
        keys = [self._key(k, a, Z[a]) for a in range(n)]
        out = np.zeros(n)
        missing = []
        for a, key in enumerate(keys):
            if not any(key[2]):
                out[a] = 0.0
                continue
            hit = self.cache.get(key)
            if hit is None:
                missing.append(a)
            else:
                out[a] = hit
        if missing:
            fresh = self.query_level(k, Z)
            for a in missing:
                self._store(keys[a], Z[a], float(fresh[a]))
                out[a] = fresh[a]
        return out

    def evaluate(self, k: int, node: int, y: float, z: np.ndarray) -> float:
        Z = np.zeros((self.basis.space.n(k - 1), self.basis.d))
        Z[node] = np.asarray(z, dtype=float)
        key = self._key(k, node, Z[node])
        if not any(key[2]):
            return 0.0
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        g = float(self.query_level(k, Z)[node])
        self._store(key, Z[node], g)
        return g

    def certificates(self) -> Dict[str, Any]:
        return {"queries": self.queries, "cached": len(self.cache), "pair_worst_ratio": self.pair_worst,
                "pair_violations": self.pair_violations}


# --------- probe grid ----------

def probe_fields(basis: MartingaleBasis, seed: int, directions: int = RANDOM_DIRECTIONS,
                 extra: Optional[Sequence[Sequence[float]]] = None) -> List[IntegrandVector]:
    """Integrand fields to query: axis points 0, +-1, +-2, seeded random rows, caller points."""
    sp = basis.space
    d = basis.d
    fields: List[IntegrandVector] = []

    def constant(z: np.ndarray) -> IntegrandVector:
        return IntegrandVector(tuple(np.tile(z, (sp.n(k - 1), 1)) for k in range(1, sp.K + 1)))

    fields.append(constant(np.zeros(d)))
    for i in range(d):
        for c in (1.0, -1.0, 2.0, -2.0):
            e = np.zeros(d)
            e[i] = c
            fields.append(constant(e))
    rng = np.random.default_rng(seed)
    for _ in range(directions):
        fields.append(IntegrandVector(tuple(rng.normal(scale=1.5, size=(sp.n(k - 1), d)) for k in range(1, sp.K + 1))))
    for z in extra or []:
        fields.append(constant(np.asarray(z, dtype=float).reshape(d)))
    return fields


def _probe(rec: RecoveredDriver, fields: Iterable[IntegrandVector], workers: int) -> None:
    sp = rec.basis.space
    jobs = [(k, f.at(k)) for f in fields for k in range(1, sp.K + 1)]
    if workers > 1 and rec.oracle.concurrent:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda kz: rec.evaluate_level(kz[0], np.zeros(sp.n(kz[0] - 1)), kz[1]), jobs))
        return
    if workers > 1:
        log.warning("oracle %s is declared serial; probing without concurrency", rec.oracle.name)
    for k, Zk in jobs:
        rec.evaluate_level(k, np.zeros(sp.n(k - 1)), Zk)


def global_drift(oracle: ExpectationOracle, r: RMatrix, probe: IntegrandVector) -> Tuple[np.ndarray, ...]:
    """g along a probe field via forward process, dominated decomposition and drift extraction."""
    basis = r.basis
    sp = basis.space
    levels = [np.zeros(1)]
    for k in range(1, sp.K + 1):
        Zk = probe.at(k)
        drift = r.norm_level(k, Zk) * sp.dmu[k]
        levels.append(sp.lift(levels[-1] - drift, k - 1, k) + integrand_jump(basis, k, Zk))
    Y = AdaptedProcess(tuple(levels))
    A, _ = er_dom_decompose(oracle, r, Y, schedule=[])
    mart = AdaptedProcess(tuple(y + a for y, a in zip(Y.levels, A.levels)))
    return drift_extract(oracle, r, mart).gpath.steps


def recover_driver(oracle: ExpectationOracle, r: RMatrix, *, audit: str = "require", method: str = "onestep",
                   seed: Optional[int] = None, samples: Optional[int] = None, directions: int = RANDOM_DIRECTIONS,
                   extra: Optional[Sequence[Sequence[float]]] = None, workers: Optional[int] = None,
                   tol: Optional[float] = None) -> RecoveredDriver:
    """Audit the oracle, then build and probe the recovered driver.

    audit: "require" refuses failing oracles, "warn" logs and continues, "skip" does neither.
    method: "onestep", or "global" to cross-check every probe against the global pipeline.
    """
    seed = SETTINGS.seed if seed is None else seed
    workers = SETTINGS.workers if workers is None else workers
    cert = certify_r(r)
    if not cert.balanced:
        raise RNotBalanced(f"r is not uniformly balanced (worst {cert.worst:.6g})", cert.as_dict())

    audit_summary: Dict[str, Any] = {"mode": audit}
    if audit != "skip":
        report = axioms_report(oracle, r=r, samples=samples, seed=seed)
        failing = report.failing(REQUIRED_FOR_RECOVERY)
        audit_summary.update({"failing": failing, "rows": [row.as_dict() for row in report.rows]})
        if failing and audit == "require":
            raise OracleAuditFailed(f"oracle fails {', '.join(failing)}", {"failing": failing})
        if failing:
            log.warning("recovering from an oracle that fails %s", failing)

    rec = RecoveredDriver(oracle, r, tol=tol)
    fields = probe_fields(r.basis, seed, directions, extra)
    _probe(rec, fields, workers)
    rec.report = {"audit": audit_summary, "method": method, "probes": len(fields)}
    if method == "global":
        worst = 0.0
        for f in fields:
            gl = global_drift(oracle, r, f)
            for k in range(1, r.basis.space.K + 1):
                one = rec.evaluate_level(k, np.zeros(len(gl[k - 1])), f.at(k))
                worst = max(worst, float(np.max(np.abs(one - gl[k - 1]))))
        rec.report["method_agreement"] = worst
    rec.report.update(rec.certificates())
    return rec


# --------- verification ----------

def default_payoffs(space, seed: int, n_random: int = 100) -> List[Tuple[str, RandomVariable]]:
    """Terminal-atom indicators, seeded random payoffs, and payoffs with zero conditional means."""
    K = space.K
    n = space.n(K)
    out: List[Tuple[str, RandomVariable]] = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        out.append((f"indicator:{space.ids[K][i]}", RandomVariable(K, e)))
    rng = np.random.default_rng(seed)
    for j in range(n_random):
        out.append((f"random:{j}", RandomVariable(K, rng.normal(scale=2.0, size=n))))
    for j in range(max(1, n_random // 10)):
        x = rng.normal(size=n)
        x = x - space.lift(space.one_step_mean(x, K), K - 1, K)
        out.append((f"matched:{j}", RandomVariable(K, x)))
    return out


def verify_representation(oracle: ExpectationOracle, rec: RecoveredDriver,
                          payoffs: Optional[Sequence[Tuple[str, RandomVariable]]] = None,
                          tol: float = 1e-9, seed: Optional[int] = None, n_random: int = 100) -> Check:
    """max over payoffs and levels of |E(Q|F_k) - E_g(Q|F_k)|."""
    sp = oracle.space
    seed = SETTINGS.seed if seed is None else seed
    payoffs = default_payoffs(sp, seed, n_random) if payoffs is None else list(payoffs)
    worst, witness = 0.0, None
    for name, Q in payoffs:
        Yg = solve(rec, Q).Y
        scale = max(1.0, float(np.max(np.abs(Q.values))))
        for k in range(Q.level + 1):
            gap = np.abs(oracle.cond(Q, k).values - Yg.levels[k]) / scale
            i = int(np.argmax(gap))
            if gap[i] > worst:
                worst, witness = float(gap[i]), {"payoff": name, "level": k, "node": sp.ids[k][i]}
    return Check("representation", worst < tol, worst, witness if worst >= tol else None,
                 {"payoffs": len(payoffs)})


def uniqueness_probe(rec: RecoveredDriver, rec2: RecoveredDriver, tol: Optional[float] = None) -> Check:
    """Agreement of two recoveries on the intersection of their query sets."""
    tol = SETTINGS.tol if tol is None else tol
    common = set(rec.cache) & set(rec2.cache)
    worst, witness = 0.0, None
    for key in sorted(common):
        gap = abs(rec.cache[key] - rec2.cache[key])
        if gap > worst:
            worst, witness = gap, {"step": key[0], "node": key[1], "z": list(key[2])}
    return Check("uniqueness", worst < tol, worst, witness if worst >= tol else None, {"common": len(common)})


def search_r(oracle: ExpectationOracle, basis: MartingaleBasis, samples: int = 50, seed: Optional[int] = None,
             iterations: int = 30) -> Dict[str, Any]:
    """Experimental: smallest scalar r passing the sampled domination audit."""
    seed = SETTINGS.seed if seed is None else seed
    unit = RMatrix.from_param(basis, 1.0)
    cert = certify_r(unit)
    ceiling = (1.0 / cert.worst) if cert.worst > 0 else 1e6
    hi = ceiling * (1.0 - 1e-9)

    def passes(rho: float) -> bool:
        return domination_audit(oracle, unit.scaled(rho), samples=samples, seed=seed).passed

    if not passes(hi):
        return {"found": False, "ceiling": ceiling, "experimental": True}
    lo = 0.0
    if passes(lo):
        return {"found": True, "r": 0.0, "ceiling": ceiling, "experimental": True}
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return {"found": True, "r": hi, "ceiling": ceiling, "experimental": True}
