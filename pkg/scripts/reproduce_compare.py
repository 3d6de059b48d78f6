"""Run baseline/hotness/raro over the stage x Zipf-theta x queue-depth grid.

Writes one compare directory per cell plus a summary grid.csv:

    python scripts/reproduce_compare.py --out results/grid --jobs 3
"""
import argparse
import csv
import itertools
from pathlib import Path

from raro_sim.config import ExperimentConfig, load
from raro_sim.experiments import compare


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", help="base YAML config (defaults otherwise)")
    ap.add_argument("--out", default="results/grid")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--requests", type=int, help="override workload.total_requests")
    ap.add_argument("--stages", default="young,middle,old")
    ap.add_argument("--thetas", default="1.2,1.5")
    ap.add_argument("--queues", default="1,4")
    args = ap.parse_args()

    base = load(args.config) if args.config else ExperimentConfig()
    if args.requests:
        base = base.replace(workload={"total_requests": args.requests})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stages = args.stages.split(",")
    thetas = [float(t) for t in args.thetas.split(",")]
    queues = [int(q) for q in args.queues.split(",")]

    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "theta", "queues", "raro_vs_baseline_iops", "raro_vs_hotness_iops",
                    "raro_vs_hotness_loss", "hotness_loss_bytes", "raro_loss_bytes",
                    "hotness_migrations", "raro_migrations"])
        for stage, theta, q in itertools.product(stages, thetas, queues):
            cfg = base.replace(stage=stage, workload={"zipf_theta": theta, "queues": q})
            rows = {r.policy: r for r in compare(cfg, out / f"{stage}_z{theta}_q{q}", jobs=args.jobs)}
            raro, hot = rows["raro"], rows["hotness"]
            line = [stage, theta, q, f"{raro.iops_ratio_vs_baseline:.4f}", f"{raro.iops / hot.iops:.4f}",
                    f"{raro.capacity_loss_ratio_vs_hotness:.4f}", hot.capacity_loss_bytes,
                    raro.capacity_loss_bytes, hot.migrations, raro.migrations]
            w.writerow(line)
            fh.flush()
            print(*line)


if __name__ == "__main__":
    main()
