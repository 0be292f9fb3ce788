# path: jobs/oracle_server.py
"""
Reference external oracle: serves a scenario oracle over the line protocol.

Usage:
    python -m jobs.oracle_server --scenario s.json --oracle er

Each stdin line is {"q": [terminal values], "level": k}; each reply line is
{"values": [level-k values]} or {"error": "..."}. EOF ends the process.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

try:
    import orjson  # type: ignore
    _USE_ORJSON = True
except Exception:
    _USE_ORJSON = False

from config import configure_logging
from bsdesvc.errors import GexpectError, ScenarioInvalid
from bsdesvc.probspace import RandomVariable
from bsdesvc.scenario import load_scenario

log = logging.getLogger("jobs.oracle_server")


def _dumps(obj: Any) -> bytes:
    if _USE_ORJSON:
        return orjson.dumps(obj, option=orjson.OPT_SERIALIZE_NUMPY) + b"\n"
    return (json.dumps(obj) + "\n").encode("utf-8")


def answer(oracle, line: bytes) -> Dict[str, Any]:
    try:
        msg = orjson.loads(line) if _USE_ORJSON else json.loads(line)
        sp = oracle.space
        Q = RandomVariable(sp.K, msg["q"])
        return {"values": oracle.cond(Q, int(msg["level"])).values.tolist()}
    except GexpectError as e:
        return {"error": f"{e.code}: {e}"}
    except (KeyError, TypeError, ValueError) as e:
        return {"error": f"bad request: {e.__class__.__name__}: {e}"}


def serve(oracle, stdin, stdout) -> int:
    served = 0
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(_dumps(answer(oracle, line)))
        stdout.flush()
        served += 1
    log.info("oracle %s served %d requests", oracle.name, served)
    return served


def parse_args(argv: List[str]) -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Serve a scenario oracle over stdin/stdout")
    p.add_argument("--scenario", required=True)
    p.add_argument("--oracle", required=True)
    return p.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    configure_logging()
    scenario = load_scenario(args.scenario)
    if scenario.model.oracles.get(args.oracle) is not None and scenario.model.oracles[args.oracle].kind == "external":
        raise ScenarioInvalid("the reference server cannot serve an external oracle",
                              pointer=f"/oracles/{args.oracle}/kind")
    oracle = scenario.oracle(args.oracle)
    try:
        serve(oracle, sys.stdin.buffer, sys.stdout.buffer)
    finally:
        scenario.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
