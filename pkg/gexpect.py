# gexpect.py - batch front end: parse, load scenario, dispatch to a handler, wrap, emit

from __future__ import annotations

import argparse
import logging
import sys
import time
from typing import Any, Dict, List, Optional

from config import SETTINGS, VERSION, configure_logging, wrap
from bsdesvc.errors import GexpectError, ScenarioInvalid
from bsdesvc.report import render
from bsdesvc.scenario import load_scenario
from handlers import axioms, basis, compare, decompose, recover, schema_get, solve, suite

log = logging.getLogger("gexpect")

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2

SCENARIO_COMMANDS = {
    "solve": solve,
    "compare": compare,
    "decompose": decompose,
    "recover": recover,
    "axioms": axioms,
    "basis": basis,
}
STANDALONE_COMMANDS = {"suite": suite, "schema": schema_get}


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors get an envelope too."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ScenarioInvalid(message, pointer="", detail={"usage": self.format_usage().strip()})


def _schedule(raw: str) -> List[float]:
    """'16' -> 2^0..2^16; '1,3,7' -> explicit list."""
    raw = raw.strip()
    if "," in raw:
        return [float(x) for x in raw.split(",") if x.strip()]
    return [float(2 ** p) for p in range(int(raw) + 1)]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gexpect", description="Exact BSDE and g-expectation engine on finite filtered spaces")
    p.add_argument("--version", action="version", version=f"gexpect {VERSION}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp: argparse.ArgumentParser, scenario: bool = True) -> None:
        if scenario:
            sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--samples", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--report", choices=["json", "text"], default="json")
        sp.add_argument("--log-level", default=None)

    s = sub.add_parser("solve", help="solve a BSDE for a payoff")
    common(s)
    s.add_argument("--driver", required=True)
    s.add_argument("--payoff", required=True)
    s.add_argument("--eps", type=float, default=None)

    c = sub.add_parser("compare", help="comparison theorem harness for two (driver, payoff) pairs")
    common(c)
    c.add_argument("--driver", required=True)
    c.add_argument("--payoff", required=True)
    c.add_argument("--driver2")
    c.add_argument("--payoff2")
    c.add_argument("--from", dest="from_", type=int, default=0)

    d = sub.add_parser("decompose", help="nonlinear Doob-Meyer decomposition of a process")
    common(d)
    d.add_argument("--process", required=True)
    d.add_argument("--driver")
    d.add_argument("--oracle")
    d.add_argument("--r")
    d.add_argument("--penalized", action="store_true")
    d.add_argument("--schedule", type=_schedule, default=None)

    r = sub.add_parser("recover", help="recover the driver of an oracle expectation")
    common(r)
    r.add_argument("--oracle", required=True)
    r.add_argument("--r", required=True)
    r.add_argument("--method", choices=["onestep", "global"], default="onestep")
    r.add_argument("--audit", choices=["require", "warn", "skip"], default="require")
    r.add_argument("--verify", type=int, nargs="?", const=100, default=None, metavar="N",
                   help="verify E = E_g on N random payoffs plus indicators")
    r.add_argument("--r-search", dest="r_search", action="store_true")

    a = sub.add_parser("axioms", help="audit the F-expectation axioms of an oracle")
    common(a)
    a.add_argument("--oracle", required=True)
    a.add_argument("--r")
    a.add_argument("--payoff")
    a.add_argument("--process")
    a.add_argument("--band", type=float, nargs=2, metavar=("ALPHA", "BETA"))

    b = sub.add_parser("basis", help="dump the martingale basis")
    common(b)

    t = sub.add_parser("suite", help="property battery on fuzzed spaces")
    common(t, scenario=False)
    t.add_argument("--trials", type=int, default=50)
    t.add_argument("--progress", action="store_true")

    sc = sub.add_parser("schema", help="scenario and report JSON schemas")
    sc.add_argument("--report", choices=["json", "text"], default="json")
    sc.add_argument("--log-level", default=None)
    return p


def _resolved(ns: argparse.Namespace) -> Dict[str, Any]:
    args = {k: v for k, v in vars(ns).items() if k not in ("report", "log_level")}
    if "from_" in args:
        args["from"] = args.pop("from_")
    st = SETTINGS.with_overrides(tol=args.get("tol"), seed=args.get("seed"), samples=args.get("samples"),
                                 workers=args.get("workers"))
    args.update(tol=st.tol, seed=st.seed, samples=st.samples, workers=st.workers)
    if args.get("r") is not None:
        args["r"] = _r_ref(args["r"])
    return args


def _r_ref(raw: str) -> Any:
    """A number is a scalar r; anything else names an entry of the scenario's r map."""
    try:
        return float(raw)
    except ValueError:
        return raw


def _emit(envelope: Dict[str, Any], fmt: str) -> None:
    sys.stdout.buffer.write(render(envelope, fmt))
    sys.stdout.flush()


def run(argv: Optional[List[str]] = None) -> tuple:
    """(envelope, exit code, report format) for one invocation."""
    fmt = "json"
    started = time.perf_counter()
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--report" in argv:
        i = argv.index("--report")
        if i + 1 < len(argv) and argv[i + 1] in ("json", "text"):
            fmt = argv[i + 1]
    try:
        ns = build_parser().parse_args(argv)
    except ScenarioInvalid as e:
        return wrap(None, {"argv": argv}, e.meta(), f"usage: {e}"), EXIT_USAGE, fmt
    configure_logging(ns.log_level)
    args = _resolved(ns)
    echo = {"command": ns.command, **{k: v for k, v in args.items() if k != "command"}}

    scenario = None
    try:
        if ns.command in STANDALONE_COMMANDS:
            data, error, meta = STANDALONE_COMMANDS[ns.command].handle(args)
        else:
            scenario = load_scenario(args["scenario"])
            data, error, meta = SCENARIO_COMMANDS[ns.command].handle(scenario, args)
    except ScenarioInvalid as e:
        return wrap(None, echo, e.meta(), f"/{ns.command} failed: {e.code}: {e}"), EXIT_USAGE, fmt
    except GexpectError as e:
        return wrap(None, echo, e.meta(), f"/{ns.command} failed: {e.code}: {e}"), EXIT_CHECK, fmt
    finally:
        if scenario is not None:
            scenario.close()

    hint = dict(meta or {})
    hint["elapsed_s"] = round(time.perf_counter() - started, 6)
    hint["version"] = VERSION
    envelope = wrap(data, echo, hint, error)
    if error:
        code = EXIT_USAGE if (meta or {}).get("code") == "ScenarioInvalid" else EXIT_CHECK
        return envelope, code, fmt
    passed = data.get("passed", True) if isinstance(data, dict) else True
    if not passed:
        log.info("%s: asserted checks failed", ns.command)
    return envelope, EXIT_OK if passed else EXIT_CHECK, fmt


def main(argv: Optional[List[str]] = None) -> int:
    envelope, code, fmt = run(argv)
    _emit(envelope, fmt)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
