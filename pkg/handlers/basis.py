# handlers/basis.py - return (data, error, meta)
from bsdesvc.errors import failure
from bsdesvc.martrep import chain_defect, dump_basis, orthogonality_defect, span_dimensions
from bsdesvc.report import Check, summarize


def handle(scenario, args):
    try:
        basis = scenario.basis
        spans = span_dimensions(basis)
        ortho = orthogonality_defect(basis)
        checks = [
            Check("orthogonality", ortho <= args["tol"], ortho),
            Check("chain", chain_defect(basis) == 0, float(chain_defect(basis))),
            Check("span", all(s["span"] == s["expected"] for s in spans), 0.0,
                  next((s for s in spans if s["span"] != s["expected"]), None)),
        ]
        data = {**summarize(checks), "d": basis.d, "ordering": basis.ordering, "spans": spans,
                "space": scenario.space.describe(), "dump": dump_basis(basis)}
        return data, None, None
    except Exception as e:
        return failure("basis", e)
