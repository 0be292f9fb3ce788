# bsdesvc/fuzz.py
"""Seeded generators for the property battery: payoffs, balanced r, clock paths, sub/supermartingales."""
from __future__ import annotations

from typing import List, Tuple

import numpy as np

from .bsde import Driver, certify_r, solve, solve_jump_level
from .gexp import er_process
from .martrep import MartingaleBasis, project_increment
from .probspace import AdaptedProcess, FilteredSpace, RandomVariable
from .rmatrix import RMatrix
from .stochcalc import FVProcess


def random_payoff(rng: np.random.Generator, space: FilteredSpace, level: int = -1, scale: float = 2.0) -> RandomVariable:
    lvl = space.K if level < 0 else level
    return RandomVariable(lvl, rng.normal(scale=scale, size=space.n(lvl)))


def balanced_r(rng: np.random.Generator, basis: MartingaleBasis, diagonal: bool = False,
               margin: Tuple[float, float] = (0.2, 0.9)) -> RMatrix:
    """Scalar or diagonal r whose uniform balance product is drawn from margin."""
    target = float(rng.uniform(*margin))
    base = RMatrix.from_param(basis, rng.uniform(0.3, 1.0, size=basis.d) if diagonal else 1.0)
    worst = certify_r(base).worst
    return base.scaled(target / worst) if worst > 0 else base


def random_fv(rng: np.random.Generator, K: int, top: float = 0.9) -> FVProcess:
    return FVProcess.from_jumps(rng.uniform(0.0, top, size=K))


def er_submartingale(rng: np.random.Generator, r: RMatrix, Q: RandomVariable) -> AdaptedProcess:
    """E^r(Q|F_t) plus a nondecreasing deterministic drift."""
    X = er_process(r, Q)
    drift = np.concatenate([[0.0], np.cumsum(rng.uniform(0.0, 0.5, size=X.horizon))])
    return AdaptedProcess(tuple(v + drift[k] for k, v in enumerate(X.levels)))


def g_supermartingale(rng: np.random.Generator, driver: Driver, Q: RandomVariable,
                      size: float = 0.5) -> Tuple[AdaptedProcess, List[np.ndarray]]:
    """Backward pass of the BSDE with an extra nonnegative predictable push dA; returns (Y, dA)."""
    basis = driver.basis
    sp = basis.space
    H = Q.level
    Y = [np.zeros(0)] * (H + 1)
    Y[H] = np.asarray(Q.values, dtype=float)
    dA: List[np.ndarray] = [np.zeros(0)] * H
    for k in range(H, 0, -1):
        m = sp.one_step_mean(Y[k], k)
        Zk = project_increment(basis, k, Y[k] - sp.lift(m, k - 1, k))
        push = rng.uniform(0.0, size, size=sp.n(k - 1)) * (rng.random(sp.n(k - 1)) < 0.7)
        # y - g(y, Z) dmu = m + push, and the compensator increment is exactly push
        Y[k - 1] = solve_jump_level(driver, k, m + push, Zk)
        dA[k - 1] = push
    return AdaptedProcess(tuple(Y)), dA


def ordered_pair(rng: np.random.Generator, space: FilteredSpace) -> Tuple[RandomVariable, RandomVariable]:
    Q = random_payoff(rng, space)
    gap = rng.uniform(0.0, 1.0, size=Q.values.shape) * (rng.random(Q.values.shape) < 0.5)
    return Q, RandomVariable(Q.level, Q.values - gap)


def tied_pair(rng: np.random.Generator, space: FilteredSpace) -> Tuple[RandomVariable, RandomVariable, int]:
    """Ordered pair whose gap vanishes on the subtree of one level-1 node; returns (Q, Q', node)."""
    Q = random_payoff(rng, space)
    node = int(rng.integers(space.n(1)))
    under = space.ancestors(space.K, 1) == node
    gap = np.where(under, 0.0, rng.uniform(0.1, 1.0, size=Q.values.shape))
    return Q, RandomVariable(Q.level, Q.values - gap), node


def martingale_of(space: FilteredSpace, Q: RandomVariable) -> AdaptedProcess:
    """Classical martingale E[Q|F_t]."""
    return AdaptedProcess(tuple(space.cond_values(Q.values, Q.level, k) for k in range(Q.level + 1)))


def same_solution(driver: Driver, Q: RandomVariable, shift: float) -> float:
    """Max gap between solves started from different root-finder initializations."""
    a = solve(driver, Q)
    b = solve(driver, Q, bracket_shift=shift)
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a.Y.levels, b.Y.levels))
