"""Refit the shipped QLC RBER coefficients and print per-stage retry histograms.

    python scripts/calibrate_defaults.py            # refit + check
    python scripts/calibrate_defaults.py --check    # only evaluate the shipped defaults
"""
import argparse

from raro_sim.calibrate import calibrate, evaluate, verify_by_simulation
from raro_sim.flash import DEFAULT_QLC_RBER


def show(fits, label):
    print(label)
    for f in fits:
        lo, hi = f.target
        bars = " ".join(f"{i}:{c}" for i, c in enumerate(f.hist) if c)
        print(f"  {f.stage:>6} P/E {f.cycles:<4d} target {lo}-{hi} coverage {f.coverage:.1%}  [{bars}]")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()
    if not args.check:
        res = calibrate()
        print(res.params)
        show(res.stages, "refit (analytic)")
        show(res.sim_stages, "refit (simulated)")
    show(evaluate(DEFAULT_QLC_RBER), "shipped defaults (analytic)")
    show(verify_by_simulation(DEFAULT_QLC_RBER), "shipped defaults (simulated)")


if __name__ == "__main__":
    main()
