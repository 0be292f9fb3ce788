# path: jobs/suite.py
"""
Property battery over fuzzed spaces, runnable without a scenario.

Usage:
    python -m jobs.suite --seed 1 --trials 50
    GEXPECT_WORKERS=4 python -m jobs.suite --seed 1 --trials 200 --output suite.json

Prints a per-property summary to stderr; the full report goes to stdout or --output.
Exit code 0 iff every property passed on every trial.
"""
from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from config import SETTINGS, configure_logging, wrap
from bsdesvc.report import render
from bsdesvc.suite import run_suite


def parse_args(argv: List[str]) -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Run the seeded property battery")
    p.add_argument("--seed", type=int, default=SETTINGS.seed)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--workers", type=int, default=SETTINGS.workers)
    p.add_argument("--tol", type=float, default=SETTINGS.tol)
    p.add_argument("--report", choices=["json", "text"], default="json")
    p.add_argument("--output")
    p.add_argument("--quiet", action="store_true", help="no progress bar")
    return p.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    configure_logging()
    result = run_suite(seed=args.seed, trials=max(args.trials, 1), workers=max(args.workers, 1), tol=args.tol,
                       progress=not args.quiet)
    for row in sorted(result.rows.values(), key=lambda r: r.name):
        mark = "ok  " if row.passed else "FAIL"
        print(f"{mark} {row.name:<28} runs={row.runs:<5} worst={row.worst:.3e}", file=sys.stderr)

    echo = {"command": "suite", "seed": args.seed, "trials": args.trials, "tol": args.tol}
    payload = render(wrap(result.as_dict(), echo, None, None), args.report)
    if args.output:
        with open(args.output, "wb") as f:
            f.write(payload)
    else:
        sys.stdout.buffer.write(payload)
    return 0 if result.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
