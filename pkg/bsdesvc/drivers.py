# bsdesvc/drivers.py
"""Driver catalog addressable from scenario files.

Catalog: zero, linear_y {a}, r_norm {r}, neg_r_norm {r}, linear_z {b}, table {values, z}.
PenalizedDriver wraps any driver with n (Ybar - y)^+ for the penalization scheme.
"""
from __future__ import annotations

from typing import Any, Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from .bsde import Driver
from .errors import DimensionMismatch, ParamsOutOfRange, Unsupported
from .martrep import MartingaleBasis
from .probspace import AdaptedProcess
from .rmatrix import RMatrix


class ZeroDriver(Driver):
    name = "zero"
    zero_at_zero = True
    y_free = True
    z_free = True

    def __init__(self, basis: MartingaleBasis):
        super().__init__(basis, lip_y=0.0, lip_z=0.0, r=None)

    def evaluate(self, k: int, node: int, y: float, z: np.ndarray) -> float:
        return 0.0

    def evaluate_level(self, k: int, y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return np.zeros(len(np.atleast_1d(y)))


class LinearYDriver(Driver):
    """g = a * y."""

    name = "linear_y"
    z_free = True

    def __init__(self, basis: MartingaleBasis, a: float):
        super().__init__(basis, lip_y=float(a) ** 2, lip_z=0.0, r=None)
        self.a = float(a)

    def evaluate(self, k: int, node: int, y: float, z: np.ndarray) -> float:
        return self.a * y

    def evaluate_level(self, k: int, y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return self.a * np.asarray(y, dtype=float)

    def solve_jump(self, k: int, m: np.ndarray, Z: np.ndarray, dmu: float) -> Optional[np.ndarray]:
        denom = 1.0 - self.a * dmu
        if denom <= 0.0:
            return None
        return np.asarray(m, dtype=float) / denom


class RNormDriver(Driver):
    """g = sign * ||r z||_M."""

    zero_at_zero = True
    y_free = True

    def __init__(self, r: RMatrix, sign: float = 1.0):
        sup = r.sup_d_norm()
        super().__init__(r.basis, lip_y=0.0, lip_z=sup * sup, r=r)
        self.sign = 1.0 if sign >= 0 else -1.0
        self.name = "r_norm" if self.sign > 0 else "neg_r_norm"

    def evaluate(self, k: int, node: int, y: float, z: np.ndarray) -> float:
        return self.sign * self.r.norm(k, node, z)

    def evaluate_level(self, k: int, y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return self.sign * self.r.norm_level(k, Z)


class LinearZDriver(Driver):
    """g = sum_i b_i sqrt(phi^i) z^i; dominated by ||b|| times the identity."""

    name = "linear_z"
    zero_at_zero = True
    y_free = True

    def __init__(self, basis: MartingaleBasis, b: Any):
        arr = np.asarray(b, dtype=float)
        if arr.ndim == 0:
            arr = np.full(basis.d, float(arr))
        if arr.shape != (basis.d,):
            raise DimensionMismatch(f"linear_z needs {basis.d} coefficients, got {arr.shape}")
        nb = float(np.linalg.norm(arr))
        super().__init__(basis, lip_y=0.0, lip_z=nb * nb, r=RMatrix.from_param(basis, nb))
        self.b = arr

    def evaluate_level(self, k: int, y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return np.einsum("ij,j,ij->i", Z, self.b, np.sqrt(self.basis.phi(k)))

    def evaluate(self, k: int, node: int, y: float, z: np.ndarray) -> float:
        return float(np.dot(self.b * np.sqrt(self.basis.phi(k)[node]), np.asarray(z, dtype=float)))


class TableDriver(Driver):
    """Per-atom constant plus per-atom linear z coefficients.

    values[k-1][a] is g(k, a, y, 0); z[k-1][a] is the coefficient row. z
    components with d<M^i> = 0 at the atom are ignored.
    """

    name = "table"
    y_free = True

    def __init__(self, basis: MartingaleBasis, values: Sequence[Sequence[float]],
                 z: Optional[Sequence[Sequence[Sequence[float]]]] = None):
        sp = basis.space
        if len(values) != sp.K:
            raise DimensionMismatch(f"table driver lists {len(values)} steps, grid has {sp.K}")
        self.values = []
        self.coef = []
        overrides = {}
        lip = 0.0
        for k in range(1, sp.K + 1):
            v = np.asarray(values[k - 1], dtype=float)
            if v.shape != (sp.n(k - 1),):
                raise DimensionMismatch(f"table step {k} has {v.shape} values, expected {sp.n(k - 1)}")
            c = np.zeros((sp.n(k - 1), basis.d)) if z is None else np.asarray(z[k - 1], dtype=float).reshape(sp.n(k - 1), basis.d)
            c = np.where(basis.active(k), c, 0.0)
            self.values.append(v)
            self.coef.append(c)
            phi = basis.phi(k)
            for a in range(sp.n(k - 1)):
                rho = float(np.sqrt(np.sum(np.where(phi[a] > 0, c[a] ** 2 / np.where(phi[a] > 0, phi[a], 1.0), 0.0))))
                overrides[(k, a)] = rho * np.eye(basis.d)
                lip = max(lip, rho * rho)
        r = RMatrix(basis, np.zeros((basis.d, basis.d)), overrides) if basis.d else None
        super().__init__(basis, lip_y=0.0, lip_z=lip, r=r)
        self.zero_at_zero = all(not np.any(v) for v in self.values)
        self.z_free = all(not np.any(c) for c in self.coef)

    def evaluate(self, k: int, node: int, y: float, z: np.ndarray) -> float:
        return float(self.values[k - 1][node] + np.dot(self.coef[k - 1][node], np.asarray(z, dtype=float)))

    def evaluate_level(self, k: int, y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return self.values[k - 1] + np.einsum("ij,ij->i", self.coef[k - 1], np.asarray(Z, dtype=float))


class PenalizedDriver(Driver):
    """f^n(k, a, y, z) = g(k, a, y, z) + n (Ybar_{k-1}(a) - y)^+."""

    def __init__(self, base: Driver, target: AdaptedProcess, n: float):
        if n < 0:
            raise ParamsOutOfRange(f"penalty weight {n} is negative")
        lip_y = None
        if base.lip_y is not None:
            K = base.basis.space.K
            lip_y = np.array([0.0] + [2.0 * (base.lip_y_at(k) + n * n) for k in range(1, K + 1)])
        lip_z = None if base.lip_z is None else 2.0 * base.lip_z
        super().__init__(base.basis, lip_y=lip_y, lip_z=lip_z, r=base.r)
        self.base = base
        self.target = target
        self.n = float(n)
        self.name = f"{base.name}+pen({n:g})"
        self.z_free = base.z_free

    def evaluate(self, k: int, node: int, y: float, z: np.ndarray) -> float:
        ybar = float(self.target.levels[k - 1][node])
        return self.base.evaluate(k, node, y, z) + self.n * max(ybar - y, 0.0)

    def evaluate_level(self, k: int, y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.base.evaluate_level(k, y, Z) + self.n * np.maximum(self.target.levels[k - 1] - y, 0.0)

    def solve_jump(self, k: int, m: np.ndarray, Z: np.ndarray, dmu: float) -> Optional[np.ndarray]:
        if not self.base.y_free:
            return None
        ybar = self.target.levels[k - 1]
        b = m + self.base.evaluate_level(k, m, Z) * dmu
        w = self.n * dmu
        return np.where(b >= ybar, b, (b + w * ybar) / (1.0 + w))


# --------- catalog ----------

def _r_param(basis: MartingaleBasis, params: Mapping[str, Any]) -> RMatrix:
    if "r" not in params:
        raise ParamsOutOfRange("r_norm drivers need an 'r' parameter")
    r = params["r"]
    return r if isinstance(r, RMatrix) else RMatrix.from_param(basis, r)


CATALOG: Dict[str, Callable[[MartingaleBasis, Mapping[str, Any]], Driver]] = {
    "zero": lambda basis, p: ZeroDriver(basis),
    "linear_y": lambda basis, p: LinearYDriver(basis, p.get("a", 0.0)),
    "r_norm": lambda basis, p: RNormDriver(_r_param(basis, p), 1.0),
    "neg_r_norm": lambda basis, p: RNormDriver(_r_param(basis, p), -1.0),
    "linear_z": lambda basis, p: LinearZDriver(basis, p.get("b", 0.0)),
    "table": lambda basis, p: TableDriver(basis, p["values"], p.get("z")),
}


def build_driver(kind: str, params: Optional[Mapping[str, Any]], basis: MartingaleBasis) -> Driver:
    factory = CATALOG.get(kind)
    if factory is None:
        raise Unsupported(f"unknown driver kind {kind!r}", {"known": sorted(CATALOG)})
    return factory(basis, dict(params or {}))
