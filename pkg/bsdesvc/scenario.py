# bsdesvc/scenario.py
"""Scenario loading, validation and reference resolution.

A scenario is validated against schema.scenario.ScenarioModel, its space is
built, and every cross-reference (driver -> r, oracle -> driver / r, process
-> driver / payoff) is checked before any command runs. Failures raise
ScenarioInvalid with a JSON pointer into the scenario document.
"""
from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
from pydantic import ValidationError

from schema.scenario import ScenarioModel
from .bsde import Driver, solve
from .drivers import build_driver
from .errors import GexpectError, ScenarioInvalid
from .martrep import MartingaleBasis, davis_varaiya_basis
from .oracles import ClassicalOracle, ErOracle, ExpectationOracle, ExternalOracle, GOracle, TableOracle, WorstCaseOracle
from .probspace import AdaptedProcess, FilteredSpace, RandomVariable, build_space
from .rmatrix import RMatrix

try:
    import orjson  # type: ignore
    _USE_ORJSON = True
except Exception:
    _USE_ORJSON = False

log = logging.getLogger(__name__)


def _loads(raw: bytes) -> Any:
    return orjson.loads(raw) if _USE_ORJSON else json.loads(raw)


def _pointer(loc) -> str:
    return "/" + "/".join(str(p) for p in loc)


def read_json(path: str) -> Any:
    try:
        with open(path, "rb") as f:
            return _loads(f.read())
    except OSError as e:
        raise ScenarioInvalid(f"cannot read {path}: {e.strerror}", pointer="") from e
    except ValueError as e:
        raise ScenarioInvalid(f"{path} is not valid JSON: {e}", pointer="") from e


@dataclass(eq=False)
class Scenario:
    model: ScenarioModel
    space: FilteredSpace
    basis: MartingaleBasis
    source: Optional[str] = None
    _drivers: Dict[str, Driver] = field(default_factory=dict)
    _oracles: Dict[str, ExpectationOracle] = field(default_factory=dict)
    _r: Dict[str, RMatrix] = field(default_factory=dict)

    @property
    def params(self) -> Dict[str, Any]:
        return dict(self.model.params)

    # --- r ---
    def rmatrix(self, ref: Any, pointer: str = "/r") -> RMatrix:
        if isinstance(ref, RMatrix):
            return ref
        if isinstance(ref, str):
            if ref not in self.model.r:
                raise ScenarioInvalid(f"unknown r {ref!r}", pointer=pointer, detail={"known": sorted(self.model.r)})
            hit = self._r.get(ref)
            if hit is None:
                hit = self._r[ref] = self._build_r(self.model.r[ref], f"/r/{ref}")
            return hit
        return self._build_r(ref, pointer)

    def _build_r(self, value: Any, pointer: str) -> RMatrix:
        try:
            return RMatrix.from_param(self.basis, value)
        except GexpectError as e:
            raise ScenarioInvalid(str(e), pointer=pointer, detail={"cause": e.code}) from e

    # --- payoffs ---
    def payoff(self, name: str) -> RandomVariable:
        if name not in self.model.payoffs:
            raise ScenarioInvalid(f"unknown payoff {name!r}", pointer=f"/payoffs/{name}",
                                  detail={"known": sorted(self.model.payoffs)})
        spec = self.model.payoffs[name]
        level, values = (self.space.K, spec) if isinstance(spec, list) else (
            self.space.K if spec.level is None else spec.level, spec.values)
        if level > self.space.K or len(values) != self.space.n(level):
            raise ScenarioInvalid(f"payoff {name!r} needs {self.space.n(min(level, self.space.K))} values at level {level}",
                                  pointer=f"/payoffs/{name}")
        return RandomVariable(level, np.asarray(values, dtype=float))

    # --- drivers ---
    def driver(self, name: str) -> Driver:
        hit = self._drivers.get(name)
        if hit is not None:
            return hit
        if name in self.model.drivers:
            spec = self.model.drivers[name]
            params = dict(spec.params)
            if "r" in params:
                params["r"] = self.rmatrix(params["r"], pointer=f"/drivers/{name}/params/r")
            kind = spec.kind
            pointer = f"/drivers/{name}"
        elif name == "zero":
            kind, params, pointer = name, {}, f"/drivers/{name}"
        else:
            raise ScenarioInvalid(f"unknown driver {name!r}", pointer=f"/drivers/{name}",
                                  detail={"known": sorted(self.model.drivers)})
        try:
            drv = build_driver(kind, params, self.basis)
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioInvalid(f"driver {name!r} has bad parameters: {e}", pointer=pointer) from e
        except GexpectError as e:
            raise ScenarioInvalid(f"driver {name!r}: {e}", pointer=pointer, detail={"cause": e.code}) from e
        self._drivers[name] = drv
        return drv

    # --- oracles ---
    def oracle(self, name: str) -> ExpectationOracle:
        hit = self._oracles.get(name)
        if hit is not None:
            return hit
        if name not in self.model.oracles:
            if name == "classical":
                hit = self._oracles[name] = ClassicalOracle(self.space, name)
                return hit
            raise ScenarioInvalid(f"unknown oracle {name!r}", pointer=f"/oracles/{name}",
                                  detail={"known": sorted(self.model.oracles)})
        spec = self.model.oracles[name]
        pointer = f"/oracles/{name}"
        kind = spec.kind
        if kind == "classical":
            orc: ExpectationOracle = ClassicalOracle(self.space, name)
        elif kind == "g":
            orc = GOracle(self.driver(spec.driver), name)
        elif kind in ("er", "neg_er"):
            orc = ErOracle(self.rmatrix(spec.r, f"{pointer}/r"), 1.0 if kind == "er" else -1.0, name)
        elif kind == "worst_case":
            orc = WorstCaseOracle(self.space, spec.measures, name)
        elif kind == "table":
            path = spec.path
            if self.source and not os.path.isabs(path):
                path = os.path.join(os.path.dirname(self.source), path)
            table = read_json(path)
            entries = table.get("entries") if isinstance(table, Mapping) else table
            if not isinstance(entries, list):
                raise ScenarioInvalid(f"oracle table {spec.path!r} has no entries list", pointer=f"{pointer}/path")
            orc = TableOracle(self.space, entries, name)
        else:
            orc = ExternalOracle(self.space, spec.command, name)
        self._oracles[name] = orc
        return orc

    def close(self) -> None:
        for orc in self._oracles.values():
            orc.close()

    # --- processes ---
    def process(self, name: str) -> AdaptedProcess:
        if name not in self.model.processes:
            raise ScenarioInvalid(f"unknown process {name!r}", pointer=f"/processes/{name}",
                                  detail={"known": sorted(self.model.processes)})
        spec = self.model.processes[name]
        if spec.e_g is not None:
            return solve(self.driver(spec.e_g.driver), self.payoff(spec.e_g.payoff)).Y
        levels = spec.levels
        for k, vals in enumerate(levels):
            if k > self.space.K or len(vals) != self.space.n(k):
                raise ScenarioInvalid(f"process {name!r} level {k} has {len(vals)} values",
                                      pointer=f"/processes/{name}/levels/{k}")
        return AdaptedProcess(tuple(np.asarray(v, dtype=float) for v in levels))

    # --- up-front reference check ---
    def check_references(self) -> None:
        m = self.model
        for name, spec in m.drivers.items():
            ref = spec.params.get("r")
            if isinstance(ref, str) and ref not in m.r:
                raise ScenarioInvalid(f"driver {name!r} names unknown r {ref!r}", pointer=f"/drivers/{name}/params/r")
        for name, spec in m.oracles.items():
            if spec.driver is not None and spec.driver not in m.drivers:
                raise ScenarioInvalid(f"oracle {name!r} names unknown driver {spec.driver!r}",
                                      pointer=f"/oracles/{name}/driver")
            if isinstance(spec.r, str) and spec.r not in m.r:
                raise ScenarioInvalid(f"oracle {name!r} names unknown r {spec.r!r}", pointer=f"/oracles/{name}/r")
        for name, spec in m.processes.items():
            if spec.e_g is None:
                continue
            if spec.e_g.driver not in m.drivers:
                raise ScenarioInvalid(f"process {name!r} names unknown driver {spec.e_g.driver!r}",
                                      pointer=f"/processes/{name}/e_g/driver")
            if spec.e_g.payoff not in m.payoffs:
                raise ScenarioInvalid(f"process {name!r} names unknown payoff {spec.e_g.payoff!r}",
                                      pointer=f"/processes/{name}/e_g/payoff")
        for name in m.payoffs:
            self.payoff(name)


def scenario_from_dict(raw: Any, source: Optional[str] = None) -> Scenario:
    if not isinstance(raw, Mapping):
        raise ScenarioInvalid("scenario must be a JSON object", pointer="")
    try:
        model = ScenarioModel.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise ScenarioInvalid(first.get("msg", "invalid scenario"), pointer=_pointer(first.get("loc", ())),
                              detail={"errors": len(e.errors())}) from e
    spec = {"times": model.times, "mu": model.mu, "nodes": [n.model_dump() for n in model.nodes]}
    try:
        space = build_space(spec)
    except GexpectError as e:
        raise ScenarioInvalid(f"{e.code}: {e}", pointer="/nodes", detail={"cause": e.code, **e.detail}) from e
    basis = davis_varaiya_basis(space)
    sc = Scenario(model, space, basis, source)
    sc.check_references()
    log.debug("scenario loaded: K=%s outcomes=%s d=%s", space.K, space.n(space.K), basis.d)
    return sc


def load_scenario(path: str) -> Scenario:
    return scenario_from_dict(read_json(path), source=path)


def default_external_command(scenario_path: str, oracle: str) -> List[str]:
    """Command line of the reference oracle process for a scenario's oracle."""
    return [sys.executable, "-m", "jobs.oracle_server", "--scenario", scenario_path, "--oracle", oracle]
