# handlers/suite.py - return (data, error, meta)
from bsdesvc.errors import failure
from bsdesvc.suite import run_suite


def handle(args):
    try:
        result = run_suite(seed=args["seed"], trials=args["trials"], workers=args["workers"], tol=args["tol"],
                           progress=args.get("progress", False))
        return result.as_dict(), None, {"trials": result.trials}
    except Exception as e:
        return failure("suite", e)
