"""Sweep the warm-data retry threshold R2 per stage and mark the Pareto set.

    python scripts/sensitivity_sweep.py --out results/sensitivity
"""
import argparse

from raro_sim.config import ExperimentConfig, load
from raro_sim.experiments import sensitivity


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--out", default="results/sensitivity")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--requests", type=int)
    args = ap.parse_args()

    cfg = load(args.config) if args.config else ExperimentConfig()
    if args.requests:
        cfg = cfg.replace(workload={"total_requests": args.requests})
    rows = sensitivity(cfg, out=args.out, jobs=args.jobs)
    for stage in ("young", "middle", "old"):
        print(stage)
        for r in (r for r in rows if r.stage == stage):
            print(f"  R2={r.r2:<3d} iops={r.iops:10.1f}  loss={r.capacity_loss_bytes / 2**30:6.3f} GiB"
                  f"  migrations={r.migrations:<4d}{'  pareto' if r.pareto else ''}")


if __name__ == "__main__":
    main()
