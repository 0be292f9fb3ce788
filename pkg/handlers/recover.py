# handlers/recover.py - return (data, error, meta)
from bsdesvc.errors import failure
from bsdesvc.report import Check, summarize
from bsdesvc.represent import recover_driver, search_r, uniqueness_probe, verify_representation

AGREEMENT_TOL = 1e-8


def _table(rec):
    sp = rec.basis.space
    return [{"step": k, "node": sp.ids[k - 1][a], "z": list(z), "g": g}
            for (k, a, z), g in sorted(rec.cache.items())]


def handle(scenario, args):
    try:
        oracle = scenario.oracle(args["oracle"])
        r = scenario.rmatrix(args["r"], pointer="/r")
        opts = dict(seed=args["seed"], samples=args["samples"], workers=args["workers"], tol=args["tol"])
        rec = recover_driver(oracle, r, audit=args.get("audit") or "require", method=args.get("method") or "onestep",
                             **opts)
        checks = [Check("pairwise_bound", rec.pair_violations == 0, rec.pair_worst)]
        if "method_agreement" in rec.report:
            gap = rec.report["method_agreement"]
            checks.append(Check("method_agreement", gap <= AGREEMENT_TOL, gap))
        if args.get("verify") is not None:
            checks.append(verify_representation(oracle, rec, seed=args["seed"], n_random=args["verify"]))
            again = recover_driver(oracle, r, audit="skip", **{**opts, "seed": args["seed"] + 1})
            checks.append(uniqueness_probe(rec, again, tol=args["tol"]))
        data = {**summarize(checks), "recovery": rec.report, "table": _table(rec)}
        if args.get("r_search"):
            data["r_search"] = search_r(oracle, scenario.basis, samples=args["samples"], seed=args["seed"])
        return data, None, {"oracle_calls": oracle.calls}
    except Exception as e:
        return failure("recover", e)
