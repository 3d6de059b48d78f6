"""Command line: ``raro-sim {run,compare,calibrate,sensitivity}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import yaml

from . import config as cfgmod
from . import experiments
from .calibrate import CalibrationError, calibrate
from .workload import TraceError


def _load(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    return cfgmod.apply_overrides(cfg, args.policy, args.stage, args.seed, args.out)


def cmd_run(args) -> int:
    cfg = _load(args)
    snap = experiments.run(cfg)
    print(f"{cfg.policy.kind} {cfg.stage}: iops={snap.iops:.1f} mean_retries={snap.mean_retries:.3f} "
          f"capacity_loss={snap.capacity_loss_bytes} migrations={snap.migration_count} failed={snap.failed}")
    print(f"wrote {cfg.out}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    rows = experiments.compare(cfg, cfg.out, jobs=args.jobs)
    for r in rows:
        print(f"{r.policy:>8}  iops={r.iops:10.1f}  x{r.iops_ratio_vs_baseline:6.2f}  "
              f"loss={r.capacity_loss_bytes:>12}  loss/hotness={r.capacity_loss_ratio_vs_hotness:.3f}  "
              f"migrations={r.migrations}")
    print(f"wrote {Path(cfg.out) / 'compare.csv'}")
    return 0


def _parse_sweep(items):
    sweep = {}
    for item in items or []:
        stage, _, values = item.partition("=")
        if not values:
            raise cfgmod.ConfigError(f"--r2 expects stage=v1,v2,...; got {item!r}")
        sweep[stage] = [int(v) for v in values.split(",") if v]
    return sweep or None


def cmd_sensitivity(args) -> int:
    cfg = _load(args)
    rows = experiments.sensitivity(cfg, _parse_sweep(args.r2), cfg.out, jobs=args.jobs)
    for r in rows:
        mark = "*" if r.pareto else " "
        print(f"{r.stage:>6} R2={r.r2:<3} iops={r.iops:10.1f} loss={r.capacity_loss_bytes:>12} {mark}")
    print(f"wrote {Path(cfg.out) / 'sensitivity.csv'}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load(args) if (args.config or args.seed is not None) else cfgmod.ExperimentConfig()
    targets = None
    if args.targets:
        targets = {}
        for item in args.targets:
            stage, _, rng = item.partition("=")
            lo, _, hi = rng.partition("-")
            targets[stage] = (int(lo), int(hi))
        from .flash import ReliabilityStage

        targets = {ReliabilityStage.parse(k): v for k, v in targets.items()}
    try:
        res = calibrate(targets, coverage=args.coverage, model=cfg.flash_model(), simulate=not args.no_verify)
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rber.yaml").write_text(yaml.safe_dump(res.fragment(), sort_keys=False))
    report = {"stages": [asdict(s) for s in res.stages], "simulated": [asdict(s) for s in res.sim_stages]}
    (out / "calibration.json").write_text(json.dumps(report, indent=2) + "\n")
    for s in res.stages:
        print(f"{s.stage:>6} P/E={s.cycles:<4} target {s.target[0]}-{s.target[1]}  "
              f"coverage={s.coverage:.1%}  95% band {s.achieved[0]}-{s.achieved[1]}  median {s.median:g}")
    print(yaml.safe_dump(res.fragment(), sort_keys=False), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="raro-sim", description="Hybrid SLC/TLC/QLC SSD read-retry simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--policy", choices=experiments.POLICIES)
        p.add_argument("--stage", choices=("young", "middle", "old"))
        p.add_argument("--seed", type=int, help="overrides RARO_SEED")
        p.add_argument("--out", help="output directory (overrides RARO_OUT)")

    p = sub.add_parser("run", help="single simulation")
    common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("compare", help="baseline vs hotness vs raro")
    common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("sensitivity", help="sweep R2 per stage")
    common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--r2", action="append", metavar="STAGE=V1,V2,...",
                   help="R2 values for one stage; repeatable (default: young 4-9, middle 7-12, old 11-16)")
    p.set_defaults(fn=cmd_sensitivity)

    p = sub.add_parser("calibrate", help="fit QLC RBER coefficients to retry ranges")
    common(p)
    p.add_argument("--target", dest="targets", action="append", metavar="STAGE=LO-HI")
    p.add_argument("--coverage", type=float, default=0.95)
    p.add_argument("--no-verify", action="store_true", help="skip the confirming simulation")
    p.set_defaults(fn=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (cfgmod.ConfigError, TraceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
