# bsdesvc/probspace.py
"""Finite filtered probability spaces on a time grid with a deterministic clock.

Levels k = 0..K index the grid times t_0 < ... < t_K. Level k carries the
partition F_k as an ordered list of nodes; node order within a level is the
canonical component order for every vector the engine emits. Level K nodes are
the outcomes.

Example:
    space = build_space({"times": [0, 1], "mu": [0, 1],
                         "nodes": [{"id": "root", "parent": None, "p": 1.0},
                                   {"id": "u", "parent": "root", "p": 0.5},
                                   {"id": "d", "parent": "root", "p": 0.5}]})
    conditional_expectation(space, RandomVariable(1, [1.0, 3.0]), 0).values  # [2.0]
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config import SETTINGS
from .errors import (
    LevelOrder,
    NoStep,
    NonIncreasingClock,
    NonRefining,
    ParamsOutOfRange,
    ProbabilityMismatch,
    ZeroProbabilityAtom,
)

log = logging.getLogger(__name__)

MAX_DEPTH = 12
MAX_BRANCHING = 4


def _frozen(a: Any, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------- value types ----------

@dataclass(frozen=True)
class TimeGrid:
    times: Tuple[float, ...]
    mu: Tuple[float, ...]

    @property
    def K(self) -> int:
        return len(self.times) - 1

    @property
    def dmu(self) -> np.ndarray:
        """Clock increments indexed by step; dmu[0] is 0 by convention."""
        out = np.zeros(len(self.mu))
        out[1:] = np.diff(np.asarray(self.mu, dtype=float))
        return out


@dataclass(frozen=True)
class RandomVariable:
    level: int
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values))

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class AdaptedProcess:
    """Values per level k = 0..horizon, each constant on the nodes of F_k."""

    levels: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(_frozen(v) for v in self.levels))

    @property
    def horizon(self) -> int:
        return len(self.levels) - 1

    def at(self, k: int) -> RandomVariable:
        return RandomVariable(k, self.levels[k])

    @classmethod
    def from_variables(cls, rvs: Sequence[RandomVariable]) -> "AdaptedProcess":
        for k, rv in enumerate(rvs):
            if rv.level != k:
                raise LevelOrder(f"process entry {k} sits at level {rv.level}")
        return cls(tuple(rv.values for rv in rvs))


@dataclass(frozen=True)
class PredictableProcess:
    """Values per step k = 1..horizon, known on the nodes of F_{k-1}.

    steps[k-1] holds the step-k values; entries may be vectors (one row per node).
    """

    steps: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(_frozen(v) for v in self.steps))

    @property
    def horizon(self) -> int:
        return len(self.steps)

    def at(self, k: int) -> np.ndarray:
        if k < 1 or k > self.horizon:
            raise LevelOrder(f"predictable process has no value at step {k}")
        return self.steps[k - 1]

    @classmethod
    def constant(cls, space: "FilteredSpace", c: float, horizon: Optional[int] = None) -> "PredictableProcess":
        K = space.K if horizon is None else horizon
        return cls(tuple(np.full(space.n(k - 1), float(c)) for k in range(1, K + 1)))


# --------- the space ----------

@dataclass(frozen=True, eq=False)
class FilteredSpace:
    grid: TimeGrid
    ids: Tuple[Tuple[str, ...], ...]
    parents: Tuple[np.ndarray, ...]  # parents[k][i] = index at level k-1 of node i at level k; parents[0] empty
    probs: Tuple[np.ndarray, ...]
    _anc: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "parents", tuple(_frozen(p, dtype=np.int64) for p in self.parents))
        object.__setattr__(self, "probs", tuple(_frozen(p) for p in self.probs))

    # shape
    @property
    def K(self) -> int:
        return self.grid.K

    @property
    def dmu(self) -> np.ndarray:
        return self.grid.dmu

    def n(self, k: int) -> int:
        return len(self.ids[k])

    def prob(self, k: int) -> np.ndarray:
        return self.probs[k]

    def parent(self, k: int) -> np.ndarray:
        return self.parents[k]

    def child_counts(self, k: int) -> np.ndarray:
        """Number of children at level k+1 for every node at level k."""
        return np.bincount(self.parents[k + 1], minlength=self.n(k))

    def children(self, k: int, node: int) -> np.ndarray:
        return np.flatnonzero(self.parents[k + 1] == node)

    def cond_prob(self, k: int) -> np.ndarray:
        """P(child | parent) for every node at level k >= 1."""
        return self.probs[k] / self.probs[k - 1][self.parents[k]]

    # navigation
    def ancestors(self, j: int, k: int) -> np.ndarray:
        """Index of the level-k ancestor of every node at level j (k <= j)."""
        if k > j:
            raise LevelOrder(f"ancestor level {k} above node level {j}")
        key = (j, k)
        hit = self._anc.get(key)
        if hit is None:
            idx = np.arange(self.n(j))
            for lvl in range(j, k, -1):
                idx = self.parents[lvl][idx]
            idx.setflags(write=False)
            self._anc[key] = hit = idx
        return hit

    def lift(self, values: np.ndarray, k: int, j: int) -> np.ndarray:
        """Broadcast F_k values onto the nodes of the finer level j."""
        return np.asarray(values)[self.ancestors(j, k)]

    def node_weights(self, q: np.ndarray) -> Tuple[np.ndarray, ...]:
        """Aggregate outcome weights into per-level node weights."""
        out: List[np.ndarray] = [np.asarray(q, dtype=float)]
        for k in range(self.K, 0, -1):
            out.append(np.bincount(self.parents[k], weights=out[-1], minlength=self.n(k - 1)))
        return tuple(reversed(out))

    def one_step_mean(self, values: np.ndarray, k: int, weights: Optional[Tuple[np.ndarray, ...]] = None) -> np.ndarray:
        """E[x_k | F_{k-1}] on the nodes of level k-1; vector rows are averaged column-wise."""
        p = self.probs if weights is None else weights
        vals = np.asarray(values, dtype=float)
        par = self.parents[k]
        pk, pprev = p[k], p[k - 1]
        if vals.ndim == 1:
            num = np.bincount(par, weights=pk * vals, minlength=self.n(k - 1))
        else:
            num = np.zeros((self.n(k - 1),) + vals.shape[1:])
            np.add.at(num, par, pk.reshape((-1,) + (1,) * (vals.ndim - 1)) * vals)
            pprev = pprev.reshape((-1,) + (1,) * (vals.ndim - 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(pprev > 0, num / np.where(pprev > 0, pprev, 1.0), 0.0)
        return out

    def cond_values(self, values: np.ndarray, j: int, k: int, weights: Optional[Tuple[np.ndarray, ...]] = None) -> np.ndarray:
        if k > j or k < 0:
            raise LevelOrder(f"cannot condition level {j} on level {k}")
        out = np.asarray(values, dtype=float)
        for lvl in range(j, k, -1):
            out = self.one_step_mean(out, lvl, weights)
        return out

    def expectation(self, values: np.ndarray, j: int) -> float:
        return float(np.dot(self.probs[j], np.asarray(values, dtype=float)))

    def outcome_path(self, outcome: int) -> List[int]:
        """Node index at each level along the path to a terminal outcome."""
        return [int(self.ancestors(self.K, k)[outcome]) for k in range(self.K + 1)]

    def describe(self) -> Dict[str, Any]:
        return {
            "K": self.K,
            "nodes_per_level": [self.n(k) for k in range(self.K + 1)],
            "mu": list(self.grid.mu),
        }


# --------- operations ----------

def _node_list(spec: Mapping[str, Any]) -> List[Mapping[str, Any]]:
    nodes = spec.get("nodes")
    if not nodes:
        raise NonRefining("space lists no nodes")
    return [dict(n) if not isinstance(n, Mapping) else n for n in nodes]


def build_space(spec: Mapping[str, Any], prob_tol: Optional[float] = None) -> FilteredSpace:
    """Validate a structured space description and freeze it."""
    tol = SETTINGS.prob_tol if prob_tol is None else prob_tol
    times = [float(t) for t in spec.get("times", [])]
    mu = [float(m) for m in spec.get("mu", [])]
    if len(times) != len(mu):
        raise NonIncreasingClock(f"times has {len(times)} entries, mu has {len(mu)}")
    if len(times) < 2:
        raise NoStep("grid needs at least one step")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise NonIncreasingClock("times must be strictly increasing")
    if any(b <= a for a, b in zip(mu, mu[1:])):
        raise NonIncreasingClock("mu must be strictly increasing (every step needs positive clock mass)")
    if not all(np.isfinite(mu)):
        raise NonIncreasingClock("mu must be finite")
    K = len(times) - 1

    raw = _node_list(spec)
    by_id: Dict[str, int] = {}
    for i, n in enumerate(raw):
        nid = str(n.get("id"))
        if nid in by_id:
            raise NonRefining(f"duplicate node id {nid!r}")
        by_id[nid] = i
    roots = [i for i, n in enumerate(raw) if n.get("parent") is None]
    if len(roots) != 1:
        raise NonRefining(f"expected exactly one root node, found {len(roots)}")

    kids: Dict[int, List[int]] = {i: [] for i in range(len(raw))}
    for i, n in enumerate(raw):
        par = n.get("parent")
        if par is None:
            continue
        if str(par) not in by_id:
            raise NonRefining(f"node {n.get('id')!r} names unknown parent {par!r}")
        kids[by_id[str(par)]].append(i)

    # breadth-first levels; list order is preserved within each level
    levels: List[List[int]] = [roots]
    seen = set(roots)
    while len(levels) <= K:
        nxt: List[int] = []
        for i in levels[-1]:
            if not kids[i]:
                raise NonRefining(f"node {raw[i].get('id')!r} at level {len(levels) - 1} has no children before t_K")
            nxt.extend(kids[i])
        nxt.sort()
        for i in nxt:
            if i in seen:
                raise NonRefining("node graph has a cycle")
            seen.add(i)
        levels.append(nxt)
    for i in levels[-1]:
        if kids[i]:
            raise NonRefining(f"node {raw[i].get('id')!r} refines past t_K")
    if len(seen) != len(raw):
        raise NonRefining("some nodes are not reachable from the root")

    probs: List[np.ndarray] = []
    for lvl in levels:
        ps = []
        for i in lvl:
            p = raw[i].get("p")
            p = 1.0 if (p is None and i == roots[0]) else p
            if p is None:
                raise ProbabilityMismatch(f"node {raw[i].get('id')!r} has no probability")
            p = float(p)
            if p <= 0.0:
                raise ZeroProbabilityAtom(f"node {raw[i].get('id')!r} has probability {p}")
            ps.append(p)
        probs.append(np.array(ps))
    if abs(probs[0][0] - 1.0) > tol:
        raise ProbabilityMismatch(f"root probability {probs[0][0]} != 1")

    pos = {i: j for lvl in levels for j, i in enumerate(lvl)}
    parents: List[np.ndarray] = [np.zeros(0, dtype=np.int64)]
    for k in range(1, K + 1):
        parents.append(np.array([pos[by_id[str(raw[i]["parent"])]] for i in levels[k]], dtype=np.int64))
        sums = np.bincount(parents[k], weights=probs[k], minlength=len(levels[k - 1]))
        bad = np.flatnonzero(np.abs(sums - probs[k - 1]) > tol)
        if bad.size:
            j = int(bad[0])
            raise ProbabilityMismatch(
                f"children of {raw[levels[k - 1][j]].get('id')!r} sum to {sums[j]} but node has {probs[k - 1][j]}",
                {"level": k - 1, "node": j},
            )

    ids = tuple(tuple(str(raw[i]["id"]) for i in lvl) for lvl in levels)
    return FilteredSpace(TimeGrid(tuple(times), tuple(mu)), ids, tuple(parents), tuple(probs))


def conditional_expectation(space: FilteredSpace, X: RandomVariable, k: int) -> RandomVariable:
    if k > X.level or k < 0:
        raise LevelOrder(f"cannot condition a level-{X.level} variable on F_{k}")
    return RandomVariable(k, space.cond_values(X.values, X.level, k))


def stieltjes_integral(space: FilteredSpace, h: PredictableProcess, a: int, b: int) -> RandomVariable:
    """Pathwise sum of h_k * dmu_k over the steps in ]t_a, t_b]."""
    if a > b or a < 0:
        raise LevelOrder(f"integration interval ]{a}, {b}] is reversed")
    dmu = space.dmu
    total = np.zeros(space.n(b))
    for k in range(a + 1, b + 1):
        total += space.lift(h.at(k) * dmu[k], k - 1, b)
    return RandomVariable(b, total)


BranchSpec = Union[int, Tuple[int, int]]


def _pair(x: Union[float, Tuple[float, float]]) -> Tuple[float, float]:
    if isinstance(x, (int, float)):
        return float(x), float(x)
    lo, hi = x
    return float(lo), float(hi)


def random_space(
    seed: int,
    depth: int,
    branching: BranchSpec = (2, 3),
    clock: Tuple[float, float] = (0.25, 1.0),
) -> FilteredSpace:
    """Deterministic fuzzed space: same seed and params, same space."""
    if depth == 0:
        raise NoStep("depth 0 gives a trivial grid {0}")
    blo, bhi = (int(branching), int(branching)) if isinstance(branching, int) else (int(branching[0]), int(branching[1]))
    clo, chi = _pair(clock)
    if not (1 <= depth <= MAX_DEPTH):
        raise ParamsOutOfRange(f"depth {depth} outside [1, {MAX_DEPTH}]")
    if not (1 <= blo <= bhi <= MAX_BRANCHING):
        raise ParamsOutOfRange(f"branching {blo}..{bhi} outside [1, {MAX_BRANCHING}]")
    if not (0.0 < clo <= chi) or not np.isfinite(chi):
        raise ParamsOutOfRange(f"clock range {clo}..{chi} must be positive and ordered")

    rng = np.random.default_rng(seed)
    dmu = rng.uniform(clo, chi, size=depth) if chi > clo else np.full(depth, clo)
    mu = np.concatenate([[0.0], np.cumsum(dmu)])
    times = np.arange(depth + 1, dtype=float)

    ids: List[Tuple[str, ...]] = [("r",)]
    parents: List[np.ndarray] = [np.zeros(0, dtype=np.int64)]
    probs: List[np.ndarray] = [np.array([1.0])]
    for k in range(1, depth + 1):
        lvl_ids: List[str] = []
        lvl_par: List[int] = []
        lvl_p: List[float] = []
        for j, pid in enumerate(ids[-1]):
            c = int(rng.integers(blo, bhi + 1))
            # floor each conditional probability at 1/(2c)
            w = 0.5 * rng.dirichlet(np.ones(c)) + 0.5 / c
            for m in range(c):
                lvl_ids.append(f"{pid}.{m}")
                lvl_par.append(j)
                lvl_p.append(float(probs[-1][j] * w[m]))
        ids.append(tuple(lvl_ids))
        parents.append(np.array(lvl_par, dtype=np.int64))
        probs.append(np.array(lvl_p))
    log.debug("random_space seed=%s depth=%s outcomes=%s", seed, depth, len(ids[-1]))
    return FilteredSpace(TimeGrid(tuple(times.tolist()), tuple(mu.tolist())), tuple(ids), tuple(parents), tuple(probs))


def space_spec(space: FilteredSpace) -> Dict[str, Any]:
    """Inverse of build_space: the structured description of a space."""
    nodes = [{"id": space.ids[0][0], "parent": None, "p": float(space.probs[0][0])}]
    for k in range(1, space.K + 1):
        for i, nid in enumerate(space.ids[k]):
            nodes.append({"id": nid, "parent": space.ids[k - 1][int(space.parents[k][i])], "p": float(space.probs[k][i])})
    return {"times": list(space.grid.times), "mu": list(space.grid.mu), "nodes": nodes}
