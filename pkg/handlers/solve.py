# handlers/solve.py - return (data, error, meta)
from bsdesvc.bsde import check_balanced, check_standard, certify_r, solve
from bsdesvc.errors import failure
from bsdesvc.gexp import domination_sandwich_check, norm_bound_check
from bsdesvc.oracles import ClassicalOracle
from bsdesvc.report import Check, summarize


def handle(scenario, args):
    try:
        driver = scenario.driver(args["driver"])
        Q = scenario.payoff(args["payoff"])
        tol = args["tol"]
        cls = check_standard(driver, samples=args["samples"], seed=args["seed"])
        sol = solve(driver, Q, classify=True, tol=tol)
        scale = max(1.0, float(abs(Q.values).max()))
        checks = [Check("bsde_residual", sol.residual <= tol * scale, sol.residual)]

        if driver.name == "zero":
            classical = ClassicalOracle(scenario.space)
            gap = max(float(abs(classical.cond(Q, k).values - sol.Y.levels[k]).max()) for k in range(Q.level + 1))
            checks.append(Check("linear_reduction", gap <= tol * scale, gap))
        admissible = driver.zero_at_zero and driver.y_free and check_balanced(driver).balanced
        if admissible:
            checks.append(norm_bound_check(driver, Q, eps=args.get("eps"), tol=tol))
        if admissible and driver.r is not None and certify_r(driver.r).balanced:
            checks.append(domination_sandwich_check(driver, driver.r, Q, tol=tol))

        data = {
            **summarize(checks),
            "Y0": sol.Y0,
            "Y": list(sol.Y.levels),
            "Z": list(sol.Z.steps),
            "g": list(sol.gvals.steps),
            "classification": cls.as_dict(),
            "driver": driver.metadata(),
        }
        return data, None, {"residual": sol.residual}
    except Exception as e:
        return failure("solve", e)
