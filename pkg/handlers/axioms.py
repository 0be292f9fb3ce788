# handlers/axioms.py - return (data, error, meta)
from bsdesvc.errors import failure
from bsdesvc.gexp import axioms_report, crossing_inequality_check, growth_bound_check


def handle(scenario, args):
    try:
        oracle = scenario.oracle(args["oracle"])
        r = scenario.rmatrix(args["r"], pointer="/r") if args.get("r") is not None else None
        report = axioms_report(oracle, r=r, samples=args["samples"], seed=args["seed"], tol=args["tol"])
        checks = [row.as_dict() for row in report.rows]
        if r is not None and args.get("payoff"):
            Q = scenario.payoff(args["payoff"])
            checks += [growth_bound_check(r, Q, k, tol=args["tol"]).as_dict() for k in range(Q.level + 1)]
        if r is not None and args.get("process") and args.get("band"):
            alpha, beta = args["band"]
            Y = scenario.process(args["process"])
            checks.append(crossing_inequality_check(r, Y, alpha, beta, tol=args["tol"]).as_dict())
        passed = all(c["passed"] for c in checks if not c.get("informational"))
        return {"passed": passed, "checks": checks, "provenance": report.provenance,
                "samples": report.samples, "seed": report.seed}, None, {"oracle_calls": oracle.calls}
    except Exception as e:
        return failure("axioms", e)
