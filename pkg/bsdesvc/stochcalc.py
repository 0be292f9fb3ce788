# bsdesvc/stochcalc.py
"""Pathwise stochastic calculus on the grid.

Every process here is purely discontinuous: the filtration and the clock only
move at grid times. Exponentials are jump products and integrals are finite
sums over steps.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from config import SETTINGS
from .errors import JumpTooLarge, LevelOrder, NotADensity
from .martrep import IntegrandVector, MartingaleBasis, integrand_jump, martingale_defect
from .probspace import AdaptedProcess, FilteredSpace, PredictableProcess, RandomVariable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Measure:
    q: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.q, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "q", arr)

    @property
    def equivalent(self) -> bool:
        return bool(np.all(self.q > 0.0))


@dataclass(frozen=True)
class FVProcess:
    """Deterministic finite-variation path sampled on the grid: values nu(t_0..t_K)."""

    values: tuple

    @classmethod
    def from_jumps(cls, jumps: Sequence[float], start: float = 0.0) -> "FVProcess":
        return cls(tuple(np.concatenate([[start], start + np.cumsum(np.asarray(jumps, dtype=float))]).tolist()))

    @property
    def jumps(self) -> np.ndarray:
        return np.diff(np.asarray(self.values, dtype=float))

    @property
    def K(self) -> int:
        return len(self.values) - 1


# --------- integrals ----------

def stoch_integral(Z: IntegrandVector, basis: MartingaleBasis, a: int, b: int) -> RandomVariable:
    """Pathwise sum over ]t_a, t_b] of sum_i Z^i_k dM^i_k, as a level-b variable."""
    if a > b or a < 0:
        raise LevelOrder(f"integration interval ]{a}, {b}] is reversed")
    sp = basis.space
    total = np.zeros(sp.n(a))
    for k in range(a + 1, b + 1):
        total = sp.lift(total, k - 1, k) + integrand_jump(basis, k, Z.at(k))
    return RandomVariable(b, total)


def integral_process(Z: IntegrandVector, basis: MartingaleBasis) -> AdaptedProcess:
    sp = basis.space
    levels = [np.zeros(1)]
    for k in range(1, Z.horizon + 1):
        levels.append(sp.lift(levels[-1], k - 1, k) + integrand_jump(basis, k, Z.at(k)))
    return AdaptedProcess(tuple(levels))


def jumps(space: FilteredSpace, N: AdaptedProcess) -> List[np.ndarray]:
    """dN_k on the nodes of level k, for k = 1..horizon; entry 0 is empty."""
    out = [np.zeros(0)]
    for k in range(1, N.horizon + 1):
        out.append(N.levels[k] - space.lift(N.levels[k - 1], k - 1, k))
    return out


def quadratic_variation(space: FilteredSpace, N: AdaptedProcess) -> AdaptedProcess:
    """[N]_t = sum of squared jumps, pathwise."""
    dN = jumps(space, N)
    levels = [np.zeros(1)]
    for k in range(1, N.horizon + 1):
        levels.append(space.lift(levels[-1], k - 1, k) + dN[k] ** 2)
    return AdaptedProcess(tuple(levels))


def predictable_qv(space: FilteredSpace, N: AdaptedProcess) -> PredictableProcess:
    """<N>: compensator of [N]; step-k value is known on level k-1."""
    dN = jumps(space, N)
    steps: List[np.ndarray] = []
    for k in range(1, N.horizon + 1):
        prev = space.lift(steps[-1], k - 2, k - 1) if steps else np.zeros(1)
        steps.append(prev + space.one_step_mean(dN[k] ** 2, k))
    return PredictableProcess(tuple(steps))


def predictable_as_adapted(space: FilteredSpace, P: PredictableProcess) -> AdaptedProcess:
    """View a cumulative predictable process as adapted (value at t_k lifted to level k)."""
    levels = [np.zeros(1)]
    for k in range(1, P.horizon + 1):
        levels.append(space.lift(P.at(k), k - 1, k))
    return AdaptedProcess(tuple(levels))


# --------- exponentials ----------

def doleans_exponential(space: FilteredSpace, N: AdaptedProcess) -> AdaptedProcess:
    """E(N)_k = prod_{j<=k} (1 + dN_j); a jump of -1 sends the path to 0 for good."""
    dN = jumps(space, N)
    levels = [np.ones(1)]
    for k in range(1, N.horizon + 1):
        levels.append(space.lift(levels[-1], k - 1, k) * (1.0 + dN[k]))
    if any(np.any(v <= 0.0) for v in levels):
        log.warning("Doleans-Dade exponential is not strictly positive")
    return AdaptedProcess(tuple(levels))


def is_positive(E: AdaptedProcess) -> bool:
    return all(bool(np.all(v > 0.0)) for v in E.levels)


def exponential_equation_defect(space: FilteredSpace, N: AdaptedProcess, E: AdaptedProcess) -> float:
    """Max pathwise |E_t - 1 - sum E_{s-} dN_s|."""
    dN = jumps(space, N)
    integral = np.zeros(1)
    worst = abs(float(E.levels[0][0]) - 1.0)
    for k in range(1, N.horizon + 1):
        integral = space.lift(integral, k - 1, k) + space.lift(E.levels[k - 1], k - 1, k) * dN[k]
        worst = max(worst, float(np.max(np.abs(E.levels[k] - 1.0 - integral))))
    return worst


def fv_exponential(nu: FVProcess, sign: float = 1.0) -> np.ndarray:
    """E(sign * nu) along the grid."""
    return np.concatenate([[1.0], np.cumprod(1.0 + sign * nu.jumps)])


def _check_jumps(nu: FVProcess) -> np.ndarray:
    dn = nu.jumps
    if np.any(dn >= 1.0):
        k = int(np.argmax(dn >= 1.0)) + 1
        raise JumpTooLarge(f"jump {dn[k - 1]} at step {k} is not below 1", {"step": k})
    return dn


def right_jump_inversion(nu: FVProcess) -> FVProcess:
    """nu~ with jumps dnu + dnu^2 / (1 - dnu), so that E(-nu) E(nu~) = 1."""
    dn = _check_jumps(nu)
    tilde = dn + dn * dn / (1.0 - dn)
    return FVProcess.from_jumps(tilde, start=float(nu.values[0]))


def gronwall_bound(alpha: Union[float, Sequence[float]], nu: FVProcess, t: int) -> float:
    """Backward Gronwall bound at grid index t.

    Covers every u with u_k <= alpha_k + sum_{j>k} u_{j-1} dnu_j, where the sum
    runs over ]t_k, T] and weights each jump by the left value u_{j-1}.

    Constant alpha: alpha * E(-nu; t) / E(-nu; T). For a path alpha_0..alpha_K the
    bound is alpha_t + E(-nu; t) * sum_{s in ]t,T]} E(nu~; s-) alpha_{s-} dnu~_s,
    which is the equality case of that hypothesis. The integrand is taken at s-
    on the grid; at s it would not reduce to the constant-alpha bound.
    """
    _check_jumps(nu)
    if t < 0 or t > nu.K:
        raise LevelOrder(f"grid index {t} outside 0..{nu.K}")
    em = fv_exponential(nu, -1.0)
    if np.isscalar(alpha):
        return float(alpha) * float(em[t] / em[-1])
    a = np.asarray(alpha, dtype=float)
    tilde = right_jump_inversion(nu)
    et = fv_exponential(tilde, 1.0)
    dt = tilde.jumps
    acc = sum(et[j - 1] * a[j - 1] * dt[j - 1] for j in range(t + 1, nu.K + 1))
    return float(a[t] + em[t] * acc)


def gronwall_recursion(alpha: Union[float, Sequence[float]], nu: FVProcess,
                       slack: Optional[Sequence[float]] = None) -> np.ndarray:
    """Backward solution of u_k = alpha_k + sum_{j>k} u_{j-1} dnu_j - slack_k.

    With zero slack this is the equality case of the Gronwall hypothesis; a
    nonnegative slack gives a path that satisfies the hypothesis strictly.
    """
    dn = _check_jumps(nu)
    K = nu.K
    a = np.full(K + 1, float(alpha)) if np.isscalar(alpha) else np.asarray(alpha, dtype=float)
    s = np.zeros(K + 1) if slack is None else np.asarray(slack, dtype=float)
    u = np.zeros(K + 1)
    u[K] = a[K] - s[K]
    tail = 0.0  # sum_{j>k+1} u_{j-1} dnu_j
    for k in range(K - 1, -1, -1):
        # u_k = a_k - s_k + u_k dnu_{k+1} + tail
        u[k] = (a[k] - s[k] + tail) / (1.0 - dn[k])
        tail += u[k] * dn[k]
    return u


# --------- measure change ----------

def girsanov(space: FilteredSpace, LambdaT: RandomVariable, tol: Optional[float] = None) -> Measure:
    tol = SETTINGS.tol if tol is None else tol
    if LambdaT.level != space.K:
        raise LevelOrder(f"density must live on level {space.K}, got {LambdaT.level}")
    lam = LambdaT.values
    if np.any(lam < -tol):
        raise NotADensity("density takes negative values", {"outcome": int(np.argmin(lam))})
    mean = space.expectation(lam, space.K)
    if abs(mean - 1.0) > tol * max(1.0, float(np.max(np.abs(lam)))):
        raise NotADensity(f"density has mean {mean}, expected 1")
    return Measure(space.prob(space.K) * np.maximum(lam, 0.0))


def is_martingale_under(space: FilteredSpace, X: AdaptedProcess, measure: Measure,
                        tol: Optional[float] = None) -> bool:
    tol = SETTINGS.tol if tol is None else tol
    w = space.node_weights(measure.q)
    for k in range(1, X.horizon + 1):
        m = space.one_step_mean(X.levels[k], k, w)
        live = w[k - 1] > 0.0
        if np.any(np.abs(m - X.levels[k - 1])[live] > tol):
            return False
    return True


def drift_removed(basis: MartingaleBasis, theta: IntegrandVector) -> List[AdaptedProcess]:
    """M~^i = M^i - int theta^i d<M^i> for every basis element."""
    sp = basis.space
    out = []
    for i in range(basis.d):
        levels = [np.zeros(1)]
        for k in range(1, sp.K + 1):
            comp = theta.at(k)[:, i] * basis.dqv[k - 1][:, i]
            levels.append(sp.lift(levels[-1], k - 1, k) + basis.increments[k][:, i] - sp.lift(comp, k - 1, k))
        out.append(AdaptedProcess(tuple(levels)))
    return out


# --------- moments ----------

def exp_moment_report(space: FilteredSpace, N: AdaptedProcess, p_max: int = 8,
                      tol: Optional[float] = None) -> Dict[str, Any]:
    """Even moments of E(N;T) and the squared-exponential bound.

    The bound is checked in its exact jump form: E(N)^2 = E(<N>) * E(N^) where
    dN^ = (2 dN + dN^2 - d<N>) / (1 + d<N>), and E(<N>; t) <= exp(<N>_T).
    The unadjusted E(2N + [N] - <N>) comparison is reported for reference.
    """
    tol = SETTINGS.tol if tol is None else tol
    H = N.horizon
    E = doleans_exponential(space, N)
    ET = E.levels[H]
    moments = []
    n = 0
    while 2 ** n <= p_max:
        moments.append({"p": 2 ** n, "moment": space.expectation(ET ** (2 ** n), H)})
        n += 1

    dN = jumps(space, N)
    dq = [np.zeros(0)] + [space.one_step_mean(dN[k] ** 2, k) for k in range(1, H + 1)]
    kappa = 0.0
    qv_level = np.zeros(1)
    for k in range(1, H + 1):
        qv_level = space.lift(qv_level, k - 1, k) + space.lift(dq[k], k - 1, k)
    kappa = float(np.max(qv_level)) if H else 0.0

    adj = np.ones(1)
    raw = np.ones(1)
    worst_adj = -math.inf
    literal_ok = True
    for k in range(1, H + 1):
        dqk = space.lift(dq[k], k - 1, k)
        adj = space.lift(adj, k - 1, k) * (1.0 + (2 * dN[k] + dN[k] ** 2 - dqk) / (1.0 + dqk))
        raw = space.lift(raw, k - 1, k) * (1.0 + 2 * dN[k] + dN[k] ** 2 - dqk)
        lhs = E.levels[k] ** 2
        bound = math.exp(kappa) * adj
        worst_adj = max(worst_adj, float(np.max((lhs - bound) / np.maximum(1.0, np.abs(bound)))))
        literal_ok = literal_ok and bool(np.all(lhs <= math.exp(kappa) * raw + tol))
    mart_defect, _ = martingale_defect(space, E)
    return {
        "moments": moments,
        "positive": is_positive(E),
        "kappa": kappa,
        "bound_worst": 0.0 if H == 0 else worst_adj,
        "bound_ok": bool(H == 0 or worst_adj <= tol),
        "literal_bound_ok": literal_ok,
        "martingale_defect": mart_defect,
    }
