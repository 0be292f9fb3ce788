# bsdesvc/oracles.py
"""Nonlinear expectation oracles.

An oracle answers cond(Q, k): the F_k-conditional value of a payoff Q that sits
at some level j >= k. Nothing is assumed about the answers; the axiom auditor
in gexp is what tests them.

Provenance tags: classical, g-expectation, E^r, E^-r, worst-case, table, external.
"""
from __future__ import annotations

import logging
import json
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np

from .bsde import Driver, certify_r, check_balanced, solve
from .drivers import RNormDriver
from .errors import DriverNotAdmissible, LevelOrder, NotADensity, OracleQueryError, RNotBalanced
from .probspace import FilteredSpace, RandomVariable, conditional_expectation
from .rmatrix import RMatrix

try:
    import orjson  # type: ignore
    _USE_ORJSON = True
except Exception:
    _USE_ORJSON = False

log = logging.getLogger(__name__)


def _dumps_line(obj: Any) -> bytes:
    if _USE_ORJSON:
        return orjson.dumps(obj, option=orjson.OPT_SERIALIZE_NUMPY) + b"\n"
    return (json.dumps(obj) + "\n").encode("utf-8")


def _loads(raw: bytes) -> Any:
    return orjson.loads(raw) if _USE_ORJSON else json.loads(raw)


class ExpectationOracle:
    provenance = "oracle"
    concurrent = True

    def __init__(self, space: FilteredSpace, name: str = ""):
        self.space = space
        self.name = name or self.provenance
        self.calls = 0
        self._lock = threading.Lock()

    def cond(self, Q: RandomVariable, k: int) -> RandomVariable:
        if k < 0 or k > Q.level:
            raise LevelOrder(f"cannot condition a level-{Q.level} payoff on F_{k}")
        with self._lock:
            self.calls += 1
        return self._cond(Q, k)

    def _cond(self, Q: RandomVariable, k: int) -> RandomVariable:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "provenance": self.provenance, "concurrent": self.concurrent}


class ClassicalOracle(ExpectationOracle):
    provenance = "classical"

    def _cond(self, Q: RandomVariable, k: int) -> RandomVariable:
        return conditional_expectation(self.space, Q, k)


class GOracle(ExpectationOracle):
    """E_g of a driver; the driver is certified once at construction."""

    provenance = "g-expectation"

    def __init__(self, driver: Driver, name: str = "", certify: bool = True):
        super().__init__(driver.basis.space, name)
        self.driver = driver
        self.certificate = None
        if certify:
            if not driver.zero_at_zero:
                raise DriverNotAdmissible(f"driver {driver.name!r} does not vanish at z = 0")
            self.certificate = check_balanced(driver)
            if not self.certificate.balanced:
                raise DriverNotAdmissible(f"driver {driver.name!r} is not certified balanced",
                                          self.certificate.as_dict())

    def _cond(self, Q: RandomVariable, k: int) -> RandomVariable:
        return solve(self.driver, Q).value(k)


class ErOracle(GOracle):
    """E^r (sign +1) or E^{-r} (sign -1)."""

    def __init__(self, r: RMatrix, sign: float = 1.0, name: str = ""):
        cert = certify_r(r)
        if not cert.balanced:
            raise RNotBalanced(f"r is not uniformly balanced (worst {cert.worst:.6g})", cert.as_dict())
        self.provenance = "E^r" if sign >= 0 else "E^-r"
        super().__init__(RNormDriver(r, sign), name, certify=False)
        self.certificate = cert
        self.r = r


class WorstCaseOracle(ExpectationOracle):
    """Static sup over a finite set of equivalent measures, conditioned directly at each level.

    Not recursive, so in general E(E(X|F_t)|F_s) != E(X|F_s).
    """

    provenance = "worst-case"

    def __init__(self, space: FilteredSpace, measures: Sequence[Sequence[float]], name: str = ""):
        super().__init__(space, name)
        qs = [np.asarray(q, dtype=float) for q in measures]
        if not qs:
            raise NotADensity("worst-case oracle needs at least one measure")
        for q in qs:
            if q.shape != (space.n(space.K),) or np.any(q <= 0.0) or abs(q.sum() - 1.0) > 1e-9:
                raise NotADensity("worst-case measures must be strictly positive outcome distributions")
        self.weights = [space.node_weights(q) for q in qs]

    def _cond(self, Q: RandomVariable, k: int) -> RandomVariable:
        vals = [self.space.cond_values(Q.values, Q.level, k, w) for w in self.weights]
        return RandomVariable(k, np.max(np.stack(vals), axis=0))

    def domination_scalar(self, basis) -> float:
        """rho with |g(z) - g(z')| <= rho ||z - z'||_M for the one-step recovered driver."""
        sp = self.space
        rho = 0.0
        for k in range(1, sp.K + 1):
            par = sp.parent(k)
            pc = sp.cond_prob(k)
            phi = basis.phi(k)
            for w in self.weights:
                qc = w[k] / w[k - 1][par]
                dens = qc / pc - 1.0
                for a in range(sp.n(k - 1)):
                    chs = np.flatnonzero(par == a)
                    v = (pc[chs] * dens[chs]) @ basis.increments[k][chs] / sp.dmu[k]
                    act = phi[a] > 0
                    rho = max(rho, float(np.sqrt(np.sum(v[act] ** 2 / phi[a][act]))))
        return rho


class TableOracle(ExpectationOracle):
    """Answers from full conditional tables keyed by the payoff's values.

    entries: [{"q": [...], "level": j, "levels": [[level 0], ..., [level j]]}, ...]
    """

    provenance = "table"

    def __init__(self, space: FilteredSpace, entries: Sequence[Mapping[str, Any]], name: str = "", digits: int = 12):
        super().__init__(space, name)
        self.digits = digits
        self.table: Dict[Any, List[np.ndarray]] = {}
        for e in entries:
            level = int(e.get("level", space.K))
            self.table[self._key(level, e["q"])] = [np.asarray(v, dtype=float) for v in e["levels"]]

    def _key(self, level: int, q: Any) -> Any:
        return (level, tuple(np.round(np.asarray(q, dtype=float), self.digits).tolist()))

    def _cond(self, Q: RandomVariable, k: int) -> RandomVariable:
        hit = self.table.get(self._key(Q.level, Q.values))
        if hit is None:
            raise OracleQueryError("payoff not present in the oracle table", {"level": Q.level})
        return RandomVariable(k, hit[k])


class ExternalOracle(ExpectationOracle):
    """Subprocess speaking one JSON object per line.

    request  {"q": [terminal values], "level": k}
    response {"values": [level-k values]}   or   {"error": "..."}
    """

    provenance = "external"
    concurrent = False

    def __init__(self, space: FilteredSpace, command: Sequence[str], name: str = "", timeout: float = 30.0):
        super().__init__(space, name)
        self.command = list(command)
        self.timeout = timeout
        self._io = threading.Lock()
        self._reader = ThreadPoolExecutor(max_workers=1, thread_name_prefix="oracle-read")
        try:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as e:
            self._reader.shutdown(wait=False)
            raise OracleQueryError(f"cannot start oracle process: {e}") from e

    def _cond(self, Q: RandomVariable, k: int) -> RandomVariable:
        q = self.space.lift(Q.values, Q.level, self.space.K)
        proc = self._proc
        if proc.poll() is not None:
            raise OracleQueryError(f"oracle process exited with code {proc.returncode}")
        try:
            with self._io:
                proc.stdin.write(_dumps_line({"q": q.tolist(), "level": int(k)}))
                proc.stdin.flush()
                line = self._reader.submit(proc.stdout.readline).result(timeout=self.timeout)
        except FutureTimeout:
            self._kill()
            raise OracleQueryError(f"oracle gave no answer within {self.timeout}s", {"timeout": self.timeout}) from None
        except OSError as e:
            raise OracleQueryError(f"oracle pipe failed: {e}") from e
        if not line:
            raise OracleQueryError("oracle process closed its output")
        try:
            msg = _loads(line)
        except ValueError as e:
            raise OracleQueryError(f"oracle sent a malformed line: {e}") from e
        if "error" in msg:
            raise OracleQueryError(f"oracle reported: {msg['error']}")
        vals = np.asarray(msg.get("values", []), dtype=float)
        if vals.shape != (self.space.n(k),):
            raise OracleQueryError(f"oracle answered {vals.shape[0]} values for level {k}, expected {self.space.n(k)}")
        return RandomVariable(k, vals)

    def _kill(self) -> None:
        proc = self._proc
        if proc.poll() is None:
            log.warning("killing oracle process %s", self.command[0])
            proc.kill()
        proc.wait()

    def close(self) -> None:
        proc = self._proc
        if proc.poll() is None:
            try:
                proc.stdin.close()
                proc.wait(timeout=self.timeout)
            except Exception:
                self._kill()
        self._reader.shutdown(wait=False)

    def __enter__(self) -> "ExternalOracle":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()
