# handlers/compare.py - return (data, error, meta)
from bsdesvc.bsde import HOLDS, compare
from bsdesvc.errors import failure
from bsdesvc.report import Check, summarize


def handle(scenario, args):
    try:
        g = scenario.driver(args["driver"])
        Q = scenario.payoff(args["payoff"])
        g2 = scenario.driver(args.get("driver2") or args["driver"])
        Q2 = scenario.payoff(args.get("payoff2") or args["payoff"])
        verdict = compare(g, Q, g2, Q2, s=args.get("from") or 0, tol=args["tol"])
        check = Check("comparison", verdict.verdict == HOLDS, 0.0, verdict.witness, {"verdict": verdict.verdict})
        return {**summarize([check]), **verdict.as_dict()}, None, None
    except Exception as e:
        return failure("compare", e)
