# bsdesvc/rmatrix.py
"""Dominating matrices r for E^r expectations and their D-norms.

Components with d<M^i> = 0 at an atom are null under the M-seminorm, so every
norm here is taken on the active block of the atom.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import DimensionMismatch
from .martrep import MartingaleBasis

RParam = Union[float, int, list, tuple, np.ndarray]


@dataclass(frozen=True, eq=False)
class RMatrix:
    basis: MartingaleBasis
    matrix: np.ndarray
    overrides: Mapping[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    _dnorm: Dict[Tuple[int, int], float] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        d = self.basis.d
        m = np.array(self.matrix, dtype=float).reshape(d, d) if d else np.zeros((0, 0))
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        for key, val in self.overrides.items():
            if np.shape(val) != (d, d):
                raise DimensionMismatch(f"r override at {key} has shape {np.shape(val)}, expected ({d}, {d})")

    @classmethod
    def from_param(cls, basis: MartingaleBasis, value: RParam) -> "RMatrix":
        """Scalar -> rho * I, flat list -> diagonal, nested list -> full matrix."""
        d = basis.d
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return cls(basis, float(arr) * np.eye(d))
        if arr.ndim == 1:
            if arr.shape[0] != d:
                raise DimensionMismatch(f"diagonal r has {arr.shape[0]} entries, basis has d={d}")
            return cls(basis, np.diag(arr))
        if arr.shape != (d, d):
            raise DimensionMismatch(f"r has shape {arr.shape}, basis has d={d}")
        return cls(basis, arr)

    def at(self, k: int, node: int) -> np.ndarray:
        return np.asarray(self.overrides.get((k, node), self.matrix))

    def scaled(self, c: float) -> "RMatrix":
        return RMatrix(self.basis, c * self.matrix, {key: c * np.asarray(v) for key, v in self.overrides.items()})

    @property
    def is_diagonal(self) -> bool:
        mats = [self.matrix, *self.overrides.values()]
        return all(np.count_nonzero(np.asarray(m) - np.diag(np.diag(m))) == 0 for m in mats)

    def norm_level(self, k: int, Z: np.ndarray) -> np.ndarray:
        """||r z||_M for every atom of step k; inactive components of z are dropped."""
        basis = self.basis
        Z = np.asarray(Z, dtype=float)
        n = Z.shape[0]
        if basis.d == 0:
            return np.zeros(n)
        act = basis.active(k)
        phi = basis.phi(k)
        U = np.where(act, Z, 0.0)
        if not self.overrides:
            RU = U @ self.matrix.T
        else:
            RU = np.stack([self.at(k, a) @ U[a] for a in range(n)])
        return np.sqrt(np.einsum("ij,ij->i", RU * RU, phi))

    def norm(self, k: int, node: int, z: np.ndarray) -> float:
        Z = np.zeros((self.basis.space.n(k - 1), self.basis.d))
        Z[node] = np.asarray(z, dtype=float)
        return float(self.norm_level(k, Z)[node])

    def weighted_block(self, k: int, node: int) -> Tuple[np.ndarray, np.ndarray]:
        """W^{1/2} r W^{-1/2} on the active block, with the active index set."""
        act = np.flatnonzero(self.basis.active(k)[node])
        if act.size == 0:
            return np.zeros((0, 0)), act
        sq = np.sqrt(self.basis.phi(k)[node, act])
        r = self.at(k, node)[np.ix_(act, act)]
        return (sq[:, None] * r) / sq[None, :], act

    def d_norm(self, k: int, node: int) -> float:
        """sup of ||r u||_M over the unit M-sphere at the atom."""
        key = (k, node)
        hit = self._dnorm.get(key)
        if hit is None:
            block, _ = self.weighted_block(k, node)
            hit = float(np.linalg.norm(block, 2)) if block.size else 0.0
            self._dnorm[key] = hit
        return hit

    def sup_d_norm(self, first_step: int = 1) -> float:
        sp = self.basis.space
        best = 0.0
        for k in range(max(1, first_step), sp.K + 1):
            for a in range(sp.n(k - 1)):
                best = max(best, self.d_norm(k, a))
        return best

    def describe(self) -> Dict[str, Any]:
        return {"matrix": self.matrix.tolist(), "overrides": len(self.overrides), "diagonal": self.is_diagonal}
