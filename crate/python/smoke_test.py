"""Smoke test for the phaseswap Python extension.

Build and install first, e.g.
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/phaseswap-*.whl
then run from the repository root:
    python3 python/smoke_test.py
"""
import math
import os
import sys

import phaseswap

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FEEDER = os.path.join(ROOT, "data", "european_lv")


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)
    print(f"ok: {msg}")


def main():
    toy = phaseswap.two_bus(0.01, 0.005)
    pf = toy.solve_pf()
    check(abs(pf["vm"][1][0] - 1.0488095) < 1e-4, "two-bus voltage")
    check(pf["mismatch"] <= 1e-8, "two-bus mismatch")
    for form in ("fixv", "linv", "lbfm"):
        ev = toy.evaluate(form)
        check(math.isclose(ev["unbalance"], ev["objective"], abs_tol=1e-12), f"{form} objective without slacks")

    scen = phaseswap.Scenario(FEEDER)
    check(scen.n_customers == 55 and scen.n_periods == 96, "bundled feeder shape")
    snap = scen.snapshot(76)
    check(len(snap.adjustable) == 10, "ten switchable customers")
    base = snap.solve_pf()
    out = snap.optimize("fixv-mw")
    check(out["objective"] <= out["initial_objective"], "optimized objective not worse")
    check(out["verified"]["unbalance"] <= base["unbalance"], "verified unbalance not worse")
    check(len(out["phases"]) == scen.n_customers, "plan covers every customer")
    moved = snap.evaluate("lbfm", phases=out["phases"])
    check(moved["objective"] >= 0.0, "evaluate an optimized plan")

    try:
        snap.optimize("milp")
    except ValueError:
        check(True, "unknown method rejected")
    else:
        check(False, "unknown method rejected")

    summary = phaseswap.run_sweep(feeder=FEEDER, periods=(70, 72), methods=["lbfm", "fixv-mw"], threads=1)
    methods = {m["method"]: m for m in summary["methods"]}
    check(summary["failures"] == 0, "sweep without failures")
    check(methods["fixv-mw"]["reduction_pct"] > 0.0, "sweep reduces unbalance")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
