# schema/scenario.py
"""Versioned scenario models (pydantic v2). The JSON schema served by `gexpect schema` is built from these."""
from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

RValue = Union[float, List[float], List[List[float]]]


class NodeModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    parent: Optional[str] = None
    p: Optional[float] = Field(default=None, description="absolute probability of the node")


class PayoffModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    level: Optional[int] = Field(default=None, ge=0, description="defaults to the terminal level")
    values: List[float]


class DriverModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["zero", "linear_y", "r_norm", "neg_r_norm", "linear_z", "table"]
    params: Dict[str, Any] = Field(default_factory=dict,
                                   description="catalog parameters; 'r' may name an entry of the scenario's r map")


class OracleModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["classical", "g", "er", "neg_er", "worst_case", "table", "external"]
    driver: Optional[str] = None
    r: Optional[Union[str, RValue]] = None
    measures: Optional[List[List[float]]] = None
    path: Optional[str] = None
    command: Optional[List[str]] = None

    @model_validator(mode="after")
    def _needs(self) -> "OracleModel":
        need = {"g": "driver", "er": "r", "neg_er": "r", "worst_case": "measures", "table": "path", "external": "command"}
        field = need.get(self.kind)
        if field and getattr(self, field) is None:
            raise ValueError(f"oracle kind {self.kind!r} needs '{field}'")
        return self


class EgRef(BaseModel):
    model_config = ConfigDict(extra="forbid")

    driver: str
    payoff: str


class ProcessModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    levels: Optional[List[List[float]]] = None
    e_g: Optional[EgRef] = None

    @model_validator(mode="after")
    def _one_source(self) -> "ProcessModel":
        if (self.levels is None) == (self.e_g is None):
            raise ValueError("a process is given either by 'levels' or by 'e_g'")
        return self


class ScenarioModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(default=1, alias="schema")
    times: List[float]
    mu: List[float]
    nodes: List[NodeModel]
    payoffs: Dict[str, Union[List[float], PayoffModel]] = Field(default_factory=dict)
    drivers: Dict[str, DriverModel] = Field(default_factory=dict)
    oracles: Dict[str, OracleModel] = Field(default_factory=dict)
    processes: Dict[str, ProcessModel] = Field(default_factory=dict)
    r: Dict[str, RValue] = Field(default_factory=dict)
    params: Dict[str, Any] = Field(default_factory=dict)


class CheckModel(BaseModel):
    name: str
    passed: bool
    worst: float = 0.0
    witness: Optional[Dict[str, Any]] = None


class ReportModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: Literal[1] = Field(default=1, alias="schema")
    data: Optional[Dict[str, Any]] = None
    error: Optional[str] = None
    echo: Optional[Dict[str, Any]] = None
    hint: Optional[Dict[str, Any]] = None
