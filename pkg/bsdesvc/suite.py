# bsdesvc/suite.py
"""Seeded property battery over fuzzed spaces.

Every trial draws its own space and instances from a SeedSequence child of the
master seed, so the same (seed, trials) gives the same report whether trials run
inline or in worker processes.
"""
from __future__ import annotations

import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from config import SETTINGS
from .bsde import HOLDS, certify_r, compare, solve
from .doobmeyer import decompose_direct, drift_extract, penalization_limit_check, penalized_sequence
from .drivers import LinearYDriver, LinearZDriver, RNormDriver, ZeroDriver
from .errors import DominationViolated, GexpectError
from .fuzz import (
    balanced_r,
    er_submartingale,
    g_supermartingale,
    martingale_of,
    ordered_pair,
    random_fv,
    random_payoff,
    tied_pair,
)
from .gexp import crossing_inequality_check, domination_sandwich_check, er_process, growth_bound_check, norm_bound_check
from .martrep import davis_varaiya_basis, martingale_defect, orthogonality_defect, reconstruct, represent, span_dimensions
from .oracles import ErOracle, GOracle, WorstCaseOracle
from .probspace import AdaptedProcess, RandomVariable, random_space
from .report import Check
from .represent import recover_driver, verify_representation
from .rmatrix import RMatrix
from .stochcalc import (
    doleans_exponential,
    exp_moment_report,
    exponential_equation_defect,
    fv_exponential,
    gronwall_bound,
    gronwall_recursion,
    jumps,
    right_jump_inversion,
)

log = logging.getLogger(__name__)

MAX_DEPTH = 4
CLOCK = (0.1, 0.5)
PAYOFFS_PER_RECOVERY = 20
CONTROL_TILT = 0.05


# --------- aggregation ----------

@dataclass
class PropertyRow:
    name: str
    runs: int = 0
    failures: int = 0
    worst: float = 0.0
    witness: Optional[Dict[str, Any]] = None

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def add(self, check: Check, trial: int) -> None:
        self.runs += 1
        self.worst = max(self.worst, float(check.worst))
        if not check.passed:
            self.failures += 1
            if self.witness is None:
                self.witness = {"trial": trial, **(check.witness or {})}

    def as_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "worst": self.worst, "witness": self.witness,
                "runs": self.runs, "failures": self.failures}


@dataclass
class SuiteResult:
    seed: int
    trials: int
    rows: Dict[str, PropertyRow] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows.values())

    def add(self, trial: int, checks: List[Check]) -> None:
        for c in checks:
            self.rows.setdefault(c.name, PropertyRow(c.name)).add(c, trial)

    def as_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "seed": self.seed, "trials": self.trials,
                "checks": [self.rows[n].as_dict() for n in sorted(self.rows)]}


# --------- single trial ----------

def _guard(name: str, fn: Callable[[], Check]) -> Check:
    try:
        return fn()
    except GexpectError as e:
        return Check(name, False, 0.0, {"error": f"{e.code}: {e}"})


def _bounded(name: str, worst: float, limit: float, witness: Optional[Dict[str, Any]] = None) -> Check:
    return Check(name, worst <= limit, worst, witness if worst > limit else None)


def _scale(*arrs: np.ndarray) -> float:
    return max([1.0] + [float(np.max(np.abs(a))) for a in arrs if np.size(a)])


def _scaled_martingale(space, Q: RandomVariable, top: float = 0.9) -> AdaptedProcess:
    N = martingale_of(space, Q)
    big = max((float(np.max(np.abs(j))) for j in jumps(space, N)[1:]), default=0.0)
    c = top / big if big > 0 else 1.0
    return AdaptedProcess(tuple(c * v for v in N.levels))


def _linear_z(rng: np.random.Generator, basis) -> LinearZDriver:
    unit = certify_r(RMatrix.from_param(basis, 1.0)).worst
    b = rng.normal(size=basis.d)
    target = float(rng.uniform(0.2, 0.9))
    return LinearZDriver(basis, b / np.linalg.norm(b) * (target / unit))


def _worst_case_control(rng: np.random.Generator, space, basis):
    """Two tilted copies of P; small tilts keep the domination scalar balanced."""
    K = space.K
    P = space.prob(K)
    measures = []
    for _ in range(2):
        h = rng.uniform(-1.0, 1.0, size=P.shape)
        q = P * (1.0 + CONTROL_TILT * h)
        measures.append(q / q.sum())
    oracle = WorstCaseOracle(space, measures, "control")
    rho = oracle.domination_scalar(basis) * 1.05 + 1e-12
    return oracle, RMatrix.from_param(basis, rho)


def run_trial(child: np.random.SeedSequence, index: int, tol: Optional[float] = None) -> List[Check]:
    """All properties on one fuzzed space."""
    tol = SETTINGS.tol if tol is None else tol
    rng = np.random.default_rng(child)
    depth = int(rng.integers(1, MAX_DEPTH + 1))
    space = random_space(int(rng.integers(0, 2 ** 31)), depth, (2, 3), CLOCK)
    basis = davis_varaiya_basis(space)
    K = space.K
    Q = random_payoff(rng, space)
    r = balanced_r(rng, basis, diagonal=bool(index % 2))
    plus, minus = RNormDriver(r, 1.0), RNormDriver(r, -1.0)
    lin_z = _linear_z(rng, basis)
    checks: List[Check] = []

    # BSDE residual over the catalog
    catalog = [ZeroDriver(basis), LinearYDriver(basis, float(rng.uniform(-1.0, 1.0))), plus, minus, lin_z]
    for drv in catalog:
        checks.append(_guard("bsde_residual", lambda drv=drv: _bounded(
            "bsde_residual", solve(drv, Q).residual, tol * _scale(Q.values), {"driver": drv.name})))

    # g = 0 is the classical conditional expectation
    def linear_reduction() -> Check:
        Y = solve(ZeroDriver(basis), Q).Y
        M = martingale_of(space, Q)
        gap = max(float(np.max(np.abs(a - b))) for a, b in zip(Y.levels, M.levels))
        return _bounded("linear_reduction", gap, 1e-12 * _scale(Q.values))
    checks.append(_guard("linear_reduction", linear_reduction))

    # martingale representation
    def representation() -> Check:
        N = martingale_of(space, Q)
        R = reconstruct(basis, float(N.levels[0][0]), represent(basis, N))
        gap = max(float(np.max(np.abs(a - b))) for a, b in zip(R.levels, N.levels))
        return _bounded("martingale_representation", gap, tol * _scale(Q.values))
    checks.append(_guard("martingale_representation", representation))
    checks.append(_bounded("basis_orthogonality", orthogonality_defect(basis), tol))
    spans = span_dimensions(basis)
    bad = next((s for s in spans if s["span"] != s["expected"]), None)
    checks.append(Check("span_dimension", bad is None, 0.0, bad))

    # comparison
    def comparison() -> Check:
        Qa, Qb = ordered_pair(rng, space)
        verdict = compare(plus, Qa, minus, Qb, tol=tol)
        return Check("comparison", verdict.verdict == HOLDS, 0.0, verdict.witness, {"verdict": verdict.verdict})
    checks.append(_guard("comparison", comparison))

    # same driver, data tied below one level-1 node: the tie must propagate forward
    def strictness() -> Check:
        Qa, Qb, node = tied_pair(rng, space)
        verdict = compare(plus, Qa, plus, Qb, tol=tol)
        return Check("comparison_strictness", verdict.verdict == HOLDS, 0.0, verdict.witness,
                     {"verdict": verdict.verdict, "tied_node": space.ids[1][node]})
    checks.append(_guard("comparison_strictness", strictness))

    # Doleans-Dade and Gronwall
    nu = random_fv(rng, K)
    prod = fv_exponential(nu, -1.0) * fv_exponential(right_jump_inversion(nu), 1.0)
    checks.append(_bounded("jump_inversion", float(np.max(np.abs(prod - 1.0))), 1e-12))
    N = _scaled_martingale(space, Q)
    E = doleans_exponential(space, N)
    checks.append(_bounded("exponential_equation", exponential_equation_defect(space, N, E), 1e-12))
    checks.append(_bounded("exponential_martingale", martingale_defect(space, E)[0], tol))
    moments = exp_moment_report(space, N, tol=tol)
    checks.append(Check("exponential_square_bound", moments["bound_ok"], max(moments["bound_worst"], 0.0)))
    alpha = float(rng.uniform(0.5, 2.0)) if index % 2 == 0 else rng.uniform(0.5, 2.0, size=K + 1)
    u = gronwall_recursion(alpha, nu)
    gw = max(abs(u[t] - gronwall_bound(alpha, nu, t)) / max(1.0, abs(u[t])) for t in range(K + 1))
    checks.append(_bounded("gronwall_equality", gw, 1e-12))

    # Doob-Meyer: direct route against the known push, then the penalization trace
    def doob_meyer() -> List[Check]:
        Y, dA = g_supermartingale(rng, plus, Q)
        dec = decompose_direct(plus, Y, tol=tol)
        gap = max(float(np.max(np.abs(a - b))) for a, b in zip(dec.dA.steps, dA))
        trace = penalized_sequence(plus, Y, tol=tol)
        return [
            _bounded("doob_meyer_direct", gap, tol * _scale(*Y.levels)),
            Check("penalization_sandwich", trace.sandwich_ok, 0.0, trace.sandwich_witness),
            penalization_limit_check(space, trace, dec),
        ]
    try:
        checks.extend(doob_meyer())
    except GexpectError as e:
        checks.append(Check("doob_meyer_direct", False, 0.0, {"error": f"{e.code}: {e}"}))

    # drift extraction from E^r-martingales
    def drift() -> Check:
        oracle = ErOracle(r)
        Qb = random_payoff(rng, space)
        one = drift_extract(oracle, r, er_process(r, Q), tol=tol)
        two = drift_extract(oracle, r, er_process(r, Qb), tol=tol)
        worst = 0.0
        for k in range(1, K + 1):
            dZ = np.asarray(one.Z.at(k)) - np.asarray(two.Z.at(k))
            excess = np.abs(one.gpath.at(k) - two.gpath.at(k)) - r.norm_level(k, dZ)
            worst = max(worst, float(np.max(excess)))
        return _bounded("drift_pairwise", worst, tol * _scale(Q.values, Qb.values))
    checks.append(_guard("drift_pairwise", drift))

    # representation round trip for z-only balanced drivers
    for drv in (plus, lin_z):
        def round_trip(drv=drv) -> Check:
            oracle = GOracle(drv)
            method = "global" if index % 5 == 0 else "onestep"
            rec = recover_driver(oracle, drv.r, audit="skip", method=method, seed=int(rng.integers(0, 2 ** 31)),
                                 directions=3, workers=1, tol=tol)
            check = verify_representation(oracle, rec, n_random=PAYOFFS_PER_RECOVERY, seed=int(rng.integers(0, 2 ** 31)))
            if "method_agreement" in rec.report and rec.report["method_agreement"] > 1e-8:
                return Check("recover_verify", False, rec.report["method_agreement"], {"method_agreement": True})
            return Check("recover_verify", check.passed, check.worst, check.witness)
        checks.append(_guard("recover_verify", round_trip))

    # negative control: a static worst case is not time-consistent
    def control() -> Check:
        cspace = random_space(int(rng.integers(0, 2 ** 31)), 2, (2, 3), CLOCK)
        cbasis = davis_varaiya_basis(cspace)
        oracle, rc = _worst_case_control(rng, cspace, cbasis)
        if not certify_r(rc).balanced:
            return Check("negative_control", True, 0.0, None, {"skipped": "domination scalar not balanced"})
        try:
            rec = recover_driver(oracle, rc, audit="warn", samples=20, directions=3, workers=1, tol=tol)
        except DominationViolated as e:
            return Check("negative_control", True, 0.0, None, {"detected": e.code})
        check = verify_representation(oracle, rec, n_random=PAYOFFS_PER_RECOVERY)
        return Check("negative_control", not check.passed, check.worst, None if not check.passed else {"undetected": True})
    checks.append(_guard("negative_control", control))

    # bounds
    checks.append(_guard("norm_bound", lambda: norm_bound_check(plus, Q, tol=tol)))
    checks.append(_guard("norm_bound", lambda: norm_bound_check(lin_z, Q, tol=tol)))
    checks.append(_guard("growth_bound", lambda: growth_bound_check(r, Q, 0, tol=tol)))
    checks.append(_guard("domination_sandwich", lambda: domination_sandwich_check(lin_z, lin_z.r, Q, tol=tol)))

    # crossings for E^r-submartingales
    def crossing() -> Check:
        Y = er_submartingale(rng, r, Q)
        flat = np.concatenate(Y.levels)
        lo, hi = np.quantile(flat, [0.3, 0.7])
        if not lo < hi:
            lo, hi = float(flat.min()) - 1.0, float(flat.max()) + 1.0
        return crossing_inequality_check(r, Y, float(lo), float(hi), tol=tol)
    checks.append(_guard("crossing_inequality", crossing))
    return checks


def _trial_job(payload) -> List[Check]:
    child, index, tol = payload
    return run_trial(child, index, tol)


def run_suite(seed: Optional[int] = None, trials: int = 50, workers: Optional[int] = None,
              tol: Optional[float] = None, progress: bool = False) -> SuiteResult:
    seed = SETTINGS.seed if seed is None else seed
    workers = SETTINGS.workers if workers is None else workers
    children = np.random.SeedSequence(seed).spawn(trials)
    payloads = [(c, i, tol) for i, c in enumerate(children)]
    result = SuiteResult(seed, trials)
    bar = tqdm(total=trials, desc="suite", file=sys.stderr, disable=not progress)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, checks in enumerate(pool.map(_trial_job, payloads)):
                result.add(i, checks)
                bar.update(1)
    else:
        for i, p in enumerate(payloads):
            result.add(i, _trial_job(p))
            bar.update(1)
    bar.close()
    failing = [n for n, row in result.rows.items() if not row.passed]
    if failing:
        log.warning("suite seed=%s: failing properties %s", seed, failing)
    return result
