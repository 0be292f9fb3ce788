# ==============================================
# schema/base.py  - report/scenario schema base
# ==============================================
from __future__ import annotations
from copy import deepcopy

from config import SCHEMA_VERSION, VERSION

base = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "info": {
        "title": "gexpect scenario and report schemas",
        "version": VERSION,
        "schema": SCHEMA_VERSION,
        "description": (
            "Scenario files describe a finite filtered space, payoffs, drivers, oracles and processes. "
            "Every command answers with the report envelope {schema, data|error, echo, hint}."
        ),
    },
    "commands": {
        "solve": "BSDE solve for --driver and --payoff; Y, Z, residual, classification, balance certificate",
        "compare": "comparison theorem harness for (--driver, --payoff) against (--driver2, --payoff2)",
        "decompose": "nonlinear Doob-Meyer decomposition of --process by --driver or --oracle",
        "recover": "driver recovery from --oracle dominated by --r, then representation check",
        "axioms": "F-expectation axiom audit of --oracle, with domination rows when --r is given",
        "suite": "seeded property battery on fuzzed spaces",
        "basis": "martingale basis dump as structured text",
        "schema": "this document",
    },
    "exit_codes": {"0": "all asserted checks pass", "1": "a check failed or the engine refused", "2": "usage or scenario error"},
    # Components are filled from the pydantic models by build_spec()
    "components": {
        "schemas": {
            "Envelope": {
                "type": "object",
                "additionalProperties": False,
                "required": ["schema"],
                "properties": {
                    "schema": {"const": SCHEMA_VERSION},
                    "data": {},
                    "echo": {"type": "object", "additionalProperties": True},
                    "hint": {"type": ["object", "null"], "additionalProperties": True},
                    "error": {"type": "string"},
                },
            },
        }
    },
}


def deep_base() -> dict:
    """Return a deep copy so callers can mutate safely."""
    return deepcopy(base)
