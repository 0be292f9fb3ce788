# bsdesvc/martrep.py
"""Orthogonal martingale basis of a finite filtered space and integrand extraction.

The basis is built by greedy stable-subspace projection over the martingales of
terminal-outcome indicators. Each accepted element is stored through its
increments at every predictable atom (a node at level k-1 for step k), scaled
to unit conditional second moment, so that d<M^i>(atom) is 1 where M^i moves
and 0 elsewhere.
Why: the BSDE solver, the seminorm and the recovery engine all read the basis
atom by atom; storing increments per level keeps every query a numpy slice.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config import SETTINGS
from .errors import DimensionMismatch, NotAMartingale
from .probspace import AdaptedProcess, FilteredSpace, PredictableProcess

log = logging.getLogger(__name__)


class IntegrandVector(PredictableProcess):
    """Predictable process with d components per atom; steps[k-1] has shape (n_{k-1}, d)."""

    @property
    def d(self) -> int:
        return int(self.steps[0].shape[1]) if self.steps else 0

    @classmethod
    def zeros(cls, space: FilteredSpace, d: int, horizon: Optional[int] = None) -> "IntegrandVector":
        K = space.K if horizon is None else horizon
        return cls(tuple(np.zeros((space.n(k - 1), d)) for k in range(1, K + 1)))


@dataclass(frozen=True, eq=False)
class MartingaleBasis:
    space: FilteredSpace
    d: int
    increments: Tuple[np.ndarray, ...]  # increments[k]: (n_k, d) jump of M^i into each level-k node; [0] is (1, d) zeros
    dqv: Tuple[np.ndarray, ...]  # dqv[k-1]: (n_{k-1}, d) predictable quadratic variation increments
    ordering: str = "greedy"
    _cache: Dict[str, Any] = field(default_factory=dict, repr=False)

    def dM(self, k: int) -> np.ndarray:
        return self.increments[k]

    def dqv_at(self, k: int) -> np.ndarray:
        return self.dqv[k - 1]

    def phi(self, k: int) -> np.ndarray:
        """Density of d<M^i> against the clock on the atoms of step k."""
        return self.dqv[k - 1] / self.space.dmu[k]

    def active(self, k: int) -> np.ndarray:
        return self.dqv[k - 1] > 0.0

    def martingale(self, i: int) -> AdaptedProcess:
        sp = self.space
        levels = [np.zeros(1)]
        for k in range(1, sp.K + 1):
            levels.append(sp.lift(levels[-1], k - 1, k) + self.increments[k][:, i])
        return AdaptedProcess(tuple(levels))

    def qv(self, i: int) -> PredictableProcess:
        """<M^i> as a predictable process: cumulative value through step k, known at k-1."""
        sp = self.space
        steps: List[np.ndarray] = []
        for k in range(1, sp.K + 1):
            prev = sp.lift(steps[-1], k - 2, k - 1) if steps else np.zeros(1)
            steps.append(prev + self.dqv[k - 1][:, i])
        return PredictableProcess(tuple(steps))


# --------- construction ----------

def _children_by_atom(space: FilteredSpace, k: int) -> List[np.ndarray]:
    par = space.parent(k)
    order = np.argsort(par, kind="stable")
    cuts = np.cumsum(np.bincount(par, minlength=space.n(k - 1)))[:-1]
    return np.split(order, cuts)


def _chain_holds(slots: Dict[Tuple[int, int], List[Tuple[int, np.ndarray]]], rank: Dict[int, int]) -> bool:
    for entries in slots.values():
        ranks = sorted(rank[j] for j, _ in entries)
        if ranks != list(range(len(ranks))):
            return False
    return True


def davis_varaiya_basis(space: FilteredSpace, tol: float = 1e-9) -> MartingaleBasis:
    """Greedy orthogonal basis; re-sorted then compacted if the absolute-continuity chain fails."""
    K = space.K
    kids = [None] + [_children_by_atom(space, k) for k in range(1, K + 1)]
    slots: Dict[Tuple[int, int], List[Tuple[int, np.ndarray]]] = {}
    d = 0
    pK = space.prob(K)
    for omega in range(space.n(K)):
        path = space.outcome_path(omega)
        residual: List[Tuple[int, int, np.ndarray]] = []
        for k in range(1, K + 1):
            a, c = path[k - 1], path[k]
            chs = kids[k][a]
            have = slots.get((k, a), [])
            if len(chs) < 2 or len(have) == len(chs) - 1:
                continue
            pa = space.prob(k - 1)[a]
            w = space.prob(k)[chs] / pa
            # jump of P(omega | F) from atom a into each child
            vec = np.full(len(chs), -pK[omega] / pa)
            vec[chs == c] += pK[omega] / space.prob(k)[c]
            scale = np.sqrt(np.dot(w, vec * vec))
            for _, e in have:
                vec = vec - np.dot(w, vec * e) * e
            nrm = np.sqrt(np.dot(w, vec * vec))
            if nrm > tol * scale:
                residual.append((k, a, vec / nrm))
        if residual:
            for k, a, e in residual:
                slots.setdefault((k, a), []).append((d, e))
            d += 1

    rank = {j: j for j in range(d)}
    ordering = "greedy"
    if not _chain_holds(slots, rank):
        mass = np.zeros(d)
        for (k, a), entries in slots.items():
            for j, _ in entries:
                mass[j] += space.prob(k - 1)[a]
        order = sorted(range(d), key=lambda j: -mass[j])
        rank = {j: r for r, j in enumerate(order)}
        ordering = "resorted"
        if not _chain_holds(slots, rank):
            ordering = "compacted"
        log.warning("basis chain violated after greedy pass; ordering=%s", ordering)

    if ordering == "compacted":
        width = max((len(v) for v in slots.values()), default=0)
        placed = {key: [(r, e) for r, (_, e) in enumerate(sorted(v, key=lambda je: rank[je[0]]))] for key, v in slots.items()}
    else:
        width = d
        placed = {key: [(rank[j], e) for j, e in v] for key, v in slots.items()}

    increments = [np.zeros((1, width))]
    dqv: List[np.ndarray] = []
    for k in range(1, K + 1):
        inc = np.zeros((space.n(k), width))
        q = np.zeros((space.n(k - 1), width))
        w_all = space.cond_prob(k)
        for a in range(space.n(k - 1)):
            chs = kids[k][a]
            for s, e in placed.get((k, a), []):
                inc[chs, s] = e
                q[a, s] = float(np.dot(w_all[chs], e * e))
        increments.append(inc)
        dqv.append(q)
    return MartingaleBasis(space, width, tuple(increments), tuple(dqv), ordering)


# --------- seminorm ----------

def seminorm_sq(z: np.ndarray, phi: np.ndarray) -> float:
    z = np.asarray(z, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if z.shape != phi.shape:
        raise DimensionMismatch(f"z has shape {z.shape}, phi has shape {phi.shape}")
    return float(np.dot(z * z, phi))


def m_norm_sq(basis: MartingaleBasis, z: np.ndarray, k: int, node: int) -> float:
    """||z||^2_M at the predictable atom (step k, node at level k-1)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != basis.d:
        raise DimensionMismatch(f"z has {z.shape[0]} components, basis has d={basis.d}")
    return seminorm_sq(z, basis.phi(k)[node])


def m_norm_sq_level(basis: MartingaleBasis, Z: np.ndarray, k: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != basis.d:
        raise DimensionMismatch(f"integrand rows have shape {Z.shape}, basis has d={basis.d}")
    return np.einsum("ij,ij->i", Z * Z, basis.phi(k))


# --------- integrands ----------

def project_increment(basis: MartingaleBasis, k: int, delta: np.ndarray) -> np.ndarray:
    """Kunita-Watanabe coefficients of a level-k jump; null components are set to 0."""
    sp = basis.space
    inc = basis.increments[k]
    num = sp.one_step_mean(np.asarray(delta, dtype=float)[:, None] * inc, k)
    q = basis.dqv[k - 1]
    return np.where(q > 0.0, num / np.where(q > 0.0, q, 1.0), 0.0)


def integrand_jump(basis: MartingaleBasis, k: int, Zk: np.ndarray) -> np.ndarray:
    """Sum_i Z^i_k dM^i_k on the nodes of level k."""
    sp = basis.space
    rows = sp.lift(np.asarray(Zk, dtype=float), k - 1, k)
    return np.einsum("ij,ij->i", rows, basis.increments[k]) if basis.d else np.zeros(sp.n(k))


def martingale_defect(space: FilteredSpace, N: AdaptedProcess) -> Tuple[float, Optional[Dict[str, int]]]:
    worst, where = 0.0, None
    for k in range(1, N.horizon + 1):
        gap = np.abs(space.one_step_mean(N.levels[k], k) - N.levels[k - 1])
        if gap.size and gap.max() > worst:
            worst, where = float(gap.max()), {"step": k, "node": int(gap.argmax())}
    return worst, where


def represent(basis: MartingaleBasis, N: AdaptedProcess, tol: Optional[float] = None) -> IntegrandVector:
    """Integrand Z with N = N_0 + sum_i int Z^i dM^i."""
    sp = basis.space
    tol = SETTINGS.tol if tol is None else tol
    scale = max(1.0, max(float(np.max(np.abs(v))) for v in N.levels))
    worst, where = martingale_defect(sp, N)
    if worst > tol * scale:
        raise NotAMartingale(f"conditional drift {worst:.3e} exceeds tolerance", where)
    steps = []
    for k in range(1, N.horizon + 1):
        delta = N.levels[k] - sp.lift(N.levels[k - 1], k - 1, k)
        steps.append(project_increment(basis, k, delta))
    return IntegrandVector(tuple(steps))


def reconstruct(basis: MartingaleBasis, N0: float, Z: IntegrandVector) -> AdaptedProcess:
    """Forward accumulation N_0 + sum Z dM."""
    sp = basis.space
    levels = [np.array([float(N0)])]
    for k in range(1, Z.horizon + 1):
        levels.append(sp.lift(levels[-1], k - 1, k) + integrand_jump(basis, k, Z.at(k)))
    return AdaptedProcess(tuple(levels))


def isometry_check(basis: MartingaleBasis, Z: IntegrandVector, A: Optional[PredictableProcess] = None,
                   tol: Optional[float] = None) -> Dict[str, Any]:
    """Both sides of the isometry on the predictable set A (all atoms when A is None)."""
    sp = basis.space
    tol = SETTINGS.tol if tol is None else tol
    H = Z.horizon
    lhs = mid = 0.0
    integral = np.zeros(1)
    for k in range(1, H + 1):
        ind = np.ones(sp.n(k - 1)) if A is None else (np.asarray(A.at(k), dtype=float) != 0).astype(float)
        Zk = np.asarray(Z.at(k))
        pk = sp.prob(k - 1)
        lhs += float(np.dot(pk, ind * m_norm_sq_level(basis, Zk, k))) * sp.dmu[k]
        mid += float(np.dot(pk, ind * np.einsum("ij,ij->i", Zk * Zk, basis.dqv[k - 1])))
        integral = sp.lift(integral, k - 1, k) + sp.lift(ind, k - 1, k) * integrand_jump(basis, k, Zk)
    rhs = sp.expectation(integral * integral, H)
    scale = max(1.0, abs(rhs))
    return {
        "lhs": lhs,
        "qv_side": mid,
        "l2_side": rhs,
        "inequality_ok": bool(lhs <= mid + tol * scale),
        "equality_ok": bool(abs(lhs - mid) <= tol * scale and abs(mid - rhs) <= tol * scale),
    }


def orthogonality_defect(basis: MartingaleBasis) -> float:
    sp = basis.space
    if basis.d < 2:
        return 0.0
    MT = np.stack([basis.martingale(i).levels[-1] for i in range(basis.d)], axis=1)
    gram = MT.T @ (sp.prob(sp.K)[:, None] * MT)
    np.fill_diagonal(gram, 0.0)
    return float(np.max(np.abs(gram)))


def chain_defect(basis: MartingaleBasis) -> int:
    """Number of atoms where phi^{i+1} > 0 but phi^i = 0."""
    bad = 0
    for k in range(1, basis.space.K + 1):
        act = basis.active(k)
        if basis.d > 1:
            bad += int(np.sum(np.any(act[:, 1:] & ~act[:, :-1], axis=1)))
    return bad


def span_dimensions(basis: MartingaleBasis) -> List[Dict[str, int]]:
    """Per level: rank of the increment span summed over atoms, against sum(children - 1)."""
    sp = basis.space
    out = []
    for k in range(1, sp.K + 1):
        kids = _children_by_atom(sp, k)
        rank = 0
        for chs in kids:
            block = basis.increments[k][chs]
            rank += int(np.linalg.matrix_rank(block)) if block.size else 0
        expected = int(np.sum(sp.child_counts(k - 1) - 1))
        out.append({"step": k, "span": rank, "expected": expected})
    return out


def dump_basis(basis: MartingaleBasis) -> str:
    """Per-atom increments and densities as stable structured text."""
    sp = basis.space
    lines = [f"basis d={basis.d} ordering={basis.ordering} K={sp.K}"]
    for k in range(1, sp.K + 1):
        kids = _children_by_atom(sp, k)
        phi = basis.phi(k)
        for a, chs in enumerate(kids):
            lines.append(f"step {k} atom {sp.ids[k - 1][a]} phi={[repr(float(x)) for x in phi[a]]}")
            for c in chs:
                lines.append(f"  child {sp.ids[k][c]} dM={[repr(float(x)) for x in basis.increments[k][c]]}")
    return "\n".join(lines) + "\n"
