"""Experiment drivers behind the CLI verbs: run, compare, sensitivity.

All reports are written with fixed float formatting and sorted keys so that
reruns with the same configs and seeds give byte-identical files.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .engine import Simulator, StatsSnapshot, precondition
from .flash import ReliabilityStage
from .policy import PolicyKind
from .workload import make_stream

log = logging.getLogger(__name__)

POLICIES = ("baseline", "hotness", "raro")
DEFAULT_R2_SWEEP = {
    "young": tuple(range(4, 10)),
    "middle": tuple(range(7, 13)),
    "old": tuple(range(11, 17)),
}


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ----------------------------------------------------------------- single run
def simulate(cfg: ExperimentConfig) -> tuple[StatsSnapshot, Simulator]:
    """Precondition, replay the workload, return the cumulative snapshot."""
    ftl = cfg.build_ftl()
    fill = int(round(cfg.ftl.fill_fraction * cfg.dataset_pages()))
    precondition(ftl, fill_pages=fill, stage=cfg.stage_enum, seed=cfg.seed)
    policy = cfg.build_policy(ftl)
    rc = cfg.reclaim
    sim = Simulator(ftl, policy, rc.interval if rc.enabled else 0, rc.watermark)
    sim.submit(make_stream(cfg.workload, cfg.geometry.page_size_kib, cfg.seed, ftl.logical_pages))
    snap = sim.run_to_completion()
    log.info("%s/%s: iops=%.1f loss=%d B migrations=%d",
             cfg.policy.kind, cfg.stage, snap.iops, snap.capacity_loss_bytes, snap.migration_count)
    return snap, sim


def write_run(snap: StatsSnapshot, out: Path, cfg: ExperimentConfig | None = None):
    out.mkdir(parents=True, exist_ok=True)
    doc = snap.to_dict()
    if cfg is not None:
        doc = {"config": cfg.to_dict(), "stats": doc}
    (out / "stats.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_csv(out / "retries_hist.csv", ["retries", "count"], enumerate(snap.retry_hist))
    _write_csv(out / "capacity_series.csv", ["time_us", "usable_bytes"],
               ((float(t), int(b)) for t, b in snap.capacity_series))


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> StatsSnapshot:
    snap, _ = simulate(cfg)
    write_run(snap, Path(out if out is not None else cfg.out), cfg)
    return snap


def _run_snapshot(cfg: ExperimentConfig) -> StatsSnapshot:
    return simulate(cfg)[0]


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -------------------------------------------------------------------- compare
@dataclass
class CompareRow:
    policy: str
    iops: float
    iops_ratio_vs_baseline: float
    capacity_loss_bytes: int
    capacity_loss_ratio_vs_hotness: float
    migrations: int
    mean_retries: float


COMPARE_HEADER = [
    "policy", "iops", "iops_ratio_vs_baseline", "capacity_loss_bytes",
    "capacity_loss_ratio_vs_hotness", "migrations", "mean_retries",
]


def policy_configs(cfg: ExperimentConfig) -> list[ExperimentConfig]:
    return [cfg.replace(policy={"kind": p}) for p in POLICIES]


def check_comparable(configs: list[ExperimentConfig]) -> dict[str, ExperimentConfig]:
    """Map policy kind -> config; everything except ``policy.kind`` and ``out`` must agree."""
    by_kind: dict[str, ExperimentConfig] = {}
    ref = None
    for c in configs:
        d = c.to_dict()
        d["policy"].pop("kind")
        d.pop("out")
        if ref is None:
            ref = d
        elif d != ref:
            diff = sorted(k for k in set(d) | set(ref) if d.get(k) != ref.get(k))
            raise ConfigError(f"compare configs differ outside the policy kind: {', '.join(diff)}")
        kind = c.policy_kind.value
        if kind in by_kind:
            raise ConfigError(f"policy {kind} given twice")
        by_kind[kind] = c
    missing = [p for p in POLICIES if p not in by_kind]
    if missing:
        raise ConfigError(f"compare needs all three policies; missing {', '.join(missing)}")
    return by_kind


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 0.0 if a == 0 else float("inf")
    return a / b


def compare(configs, out: str | Path | None = None, jobs: int = 1) -> list[CompareRow]:
    """Run baseline, hotness and raro on otherwise identical configs."""
    if isinstance(configs, ExperimentConfig):
        configs = policy_configs(configs)
    by_kind = check_comparable(list(configs))
    ordered = [by_kind[p] for p in POLICIES]
    snaps = dict(zip(POLICIES, _map(_run_snapshot, ordered, jobs)))
    base_iops = snaps["baseline"].iops
    hot_loss = snaps["hotness"].capacity_loss_bytes
    rows = [
        CompareRow(
            p, s.iops, _ratio(s.iops, base_iops), s.capacity_loss_bytes,
            _ratio(s.capacity_loss_bytes, hot_loss), s.migration_count, s.mean_retries,
        )
        for p, s in snaps.items()
    ]
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "compare.csv", COMPARE_HEADER,
                   ([getattr(r, h) for h in COMPARE_HEADER] for r in rows))
        for p, s in snaps.items():
            write_run(s, out / p)
    return rows


# ---------------------------------------------------------------- sensitivity
@dataclass
class SensitivityRow:
    stage: str
    r2: int
    iops: float
    capacity_loss_bytes: int
    migrations: int
    mean_retries: float
    pareto: bool = False


SENSITIVITY_HEADER = ["stage", "r2", "iops", "capacity_loss_bytes", "migrations", "mean_retries", "pareto"]


def mark_pareto(rows: list[SensitivityRow]):
    """Flag rows not dominated within their stage (higher IOPS and lower loss are better)."""
    for r in rows:
        r.pareto = not any(
            o is not r and o.stage == r.stage
            and o.iops >= r.iops and o.capacity_loss_bytes <= r.capacity_loss_bytes
            and (o.iops > r.iops or o.capacity_loss_bytes < r.capacity_loss_bytes)
            for o in rows
        )


def sensitivity_configs(cfg: ExperimentConfig, sweep: dict | None = None) -> list[tuple[str, int, ExperimentConfig]]:
    sweep = sweep or DEFAULT_R2_SWEEP
    r1 = cfg.policy.r1
    out = []
    for stage, values in sweep.items():
        stage = str(ReliabilityStage.parse(stage))
        for r2 in values:
            if r2 < r1:
                raise ConfigError(f"sensitivity: R2={r2} below R1={r1} for stage {stage}")
            # only the swept stage's R2 can fire (QLC blocks stay in that stage);
            # the others are clamped around it so the thresholds stay monotone
            r2s = {s: getattr(cfg.policy, f"r2_{s}") for s in ("young", "middle", "old")}
            r2s[stage] = int(r2)
            order = ["young", "middle", "old"]
            i = order.index(stage)
            for s in order[:i]:
                r2s[s] = min(r2s[s], int(r2))
            for s in order[i + 1:]:
                r2s[s] = max(r2s[s], int(r2))
            pol = {"kind": PolicyKind.RARO.value, **{f"r2_{s}": v for s, v in r2s.items()}}
            c = cfg.replace(policy=pol, stage=stage)
            out.append((stage, int(r2), c))
    return out


def sensitivity(cfg: ExperimentConfig, sweep: dict | None = None, out: str | Path | None = None,
                jobs: int = 1) -> list[SensitivityRow]:
    """RARO under each R2 value of each stage; other thresholds stay at ``cfg``'s."""
    plan = sensitivity_configs(cfg, sweep)
    snaps = _map(_run_snapshot, [c for _, _, c in plan], jobs)
    rows = [
        SensitivityRow(stage, r2, s.iops, s.capacity_loss_bytes, s.migration_count, s.mean_retries)
        for (stage, r2, _), s in zip(plan, snaps)
    ]
    mark_pareto(rows)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "sensitivity.csv", SENSITIVITY_HEADER,
                   ([getattr(r, h) for h in SENSITIVITY_HEADER] for r in rows))
    return rows
