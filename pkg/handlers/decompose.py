# handlers/decompose.py - return (data, error, meta)
"""
decompose: nonlinear Doob-Meyer for a named process.
- with --oracle: the dominated route (oracle queries only) plus drift extraction
- otherwise: the direct route, optionally with the penalization trace
"""
from bsdesvc.doobmeyer import (
    corollary_check,
    decompose_direct,
    dominated_check,
    drift_extract,
    er_dom_decompose,
    is_g_supermartingale,
    oracle_limit_check,
    penalization_limit_check,
    penalized_sequence,
)
from bsdesvc.errors import failure
from bsdesvc.probspace import AdaptedProcess
from bsdesvc.report import Check, summarize


def _dominated(scenario, args, Y):
    oracle = scenario.oracle(args["oracle"])
    r = scenario.rmatrix(args["r"], pointer="/r")
    A, trace = er_dom_decompose(oracle, r, Y, schedule=args.get("schedule"), tol=args["tol"])
    mart = AdaptedProcess(tuple(y + a for y, a in zip(Y.levels, A.levels)))
    drift = drift_extract(oracle, r, mart, tol=args["tol"])
    checks = [
        dominated_check(trace, Y, tol=args["tol"]),
        Check("drift_bound", drift.bound_slack <= args["tol"], max(drift.bound_slack, 0.0)),
    ]
    if trace.schedule:
        checks.append(oracle_limit_check(scenario.space, trace, A))
    return {**summarize(checks), "route": "dominated", "A": list(A.levels), "g": list(drift.gpath.steps),
            "Z": list(drift.Z.steps), "penalization": trace.as_dict()}


def handle(scenario, args):
    try:
        Y = scenario.process(args["process"])
        if args.get("oracle"):
            return _dominated(scenario, args, Y), None, None

        driver = scenario.driver(args["driver"])
        checks = [is_g_supermartingale(driver, Y, tol=args["tol"])]
        dec = decompose_direct(driver, Y, tol=args["tol"])
        scale = max(1.0, max(float(abs(v).max()) for v in Y.levels))
        checks.append(Check("reconstruction", dec.reconstruction_error <= args["tol"] * scale,
                            dec.reconstruction_error))
        if driver.y_free:
            checks.append(corollary_check(driver, dec, tol=args["tol"]))
        data = {"route": "direct", "Y0": dec.Y0, "A": list(dec.A.levels), "dA": list(dec.dA.steps),
                "Z": list(dec.Z.steps), "g": list(dec.gpath.steps)}
        if args.get("penalized"):
            trace = penalized_sequence(driver, Y, schedule=args.get("schedule"), tol=args["tol"])
            checks.append(Check("penalization_sandwich", trace.sandwich_ok, 0.0, trace.sandwich_witness))
            checks.append(Check("penalization_bounded", trace.bounded))
            checks.append(penalization_limit_check(scenario.space, trace, dec))
            data["penalization"] = trace.as_dict()
        return {**summarize(checks), **data}, None, None
    except Exception as e:
        return failure("decompose", e)
