"""Heat classification and migration policies (Baseline, Hotness, RARO)."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .flash import FlashMode, ReliabilityStage, stage_bounds


class Heat(IntEnum):
    COLD = 0
    WARM = 1
    HOT = 2


class PolicyKind(str, Enum):
    BASELINE = "baseline"
    HOTNESS = "hotness"
    RARO = "raro"

    @classmethod
    def parse(cls, value) -> "PolicyKind":
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown policy {value!r} (expected baseline, hotness or raro)") from None

    def __str__(self) -> str:
        return self.value


@dataclass
class PolicyThresholds:
    r1: int = 1
    r2_young: int = 5
    r2_middle: int = 7
    r2_old: int = 11

    def __post_init__(self):
        if self.r1 < 1:
            raise ValueError("r1 must be >= 1")
        r2 = self.r2_by_stage
        for stage, value in r2.items():
            if value < self.r1:
                raise ValueError(f"r2_{stage} = {value} is below r1 = {self.r1}")
        if not r2[ReliabilityStage.YOUNG] <= r2[ReliabilityStage.MIDDLE] <= r2[ReliabilityStage.OLD]:
            raise ValueError("r2 must be nondecreasing from young to old")

    @property
    def r2_by_stage(self) -> dict[ReliabilityStage, int]:
        return {
            ReliabilityStage.YOUNG: self.r2_young,
            ReliabilityStage.MIDDLE: self.r2_middle,
            ReliabilityStage.OLD: self.r2_old,
        }

    def r2(self, stage: ReliabilityStage) -> int:
        return (self.r2_young, self.r2_middle, self.r2_old)[stage]


class HeatState:
    """Exponentially decayed access counters per extent of the logical space.

    Time is measured in recorded accesses.  Decay is applied lazily: each
    extent remembers when it was last touched.
    """

    def __init__(self, logical_pages: int, extent_pages: int = 256, half_life: float = 100_000,
                 theta_hot: float = 1.0, theta_warm: float = 0.5):
        if not theta_hot > theta_warm > 0:
            raise ValueError("need theta_hot > theta_warm > 0")
        if half_life <= 0 or extent_pages < 1:
            raise ValueError("half_life and extent_pages must be positive")
        self.extent_pages = extent_pages
        self.half_life = float(half_life)
        self.theta_hot = float(theta_hot)
        self.theta_warm = float(theta_warm)
        n = -(-logical_pages // extent_pages)
        self.scores = [0.0] * n
        self.stamps = [0] * n
        self.clock = 0

    @property
    def n_extents(self) -> int:
        return len(self.scores)

    def extent(self, lpn: int) -> int:
        return lpn // self.extent_pages

    def record_access(self, lpn: int) -> float:
        self.clock += 1
        e = lpn // self.extent_pages
        dt = self.clock - self.stamps[e]
        s = self.scores[e]
        if dt and s:
            s *= 0.5 ** (dt / self.half_life)
        s += 1.0
        self.scores[e] = s
        self.stamps[e] = self.clock
        return s

    def advance(self, accesses: int):
        """Let ``accesses`` requests elapse without touching any extent."""
        self.clock += accesses

    def score(self, lpn: int) -> float:
        e = lpn // self.extent_pages
        s = self.scores[e]
        dt = self.clock - self.stamps[e]
        if dt and s:
            s *= 0.5 ** (dt / self.half_life)
        return s

    def classify_score(self, score: float) -> Heat:
        if score >= self.theta_hot:
            return Heat.HOT
        if score >= self.theta_warm:
            return Heat.WARM
        return Heat.COLD

    def classify(self, lpn: int) -> Heat:
        return self.classify_score(self.score(lpn))


def record_access(state: HeatState, lpn: int) -> HeatState:
    state.record_access(lpn)
    return state


def classify_heat(state: HeatState, lpn: int) -> Heat:
    return state.classify(lpn)


def uniform_heat_thresholds(
    logical_pages: int,
    extent_pages: int = 256,
    half_life: float = 100_000,
    seed: int = 0,
    hot_quantile: float = 0.98,
    warm_quantile: float = 0.80,
    warmup_half_lives: float = 5.0,
) -> tuple[float, float]:
    """(theta_hot, theta_warm) = score quantiles after a uniform warmup window."""
    n_ext = -(-logical_pages // extent_pages)
    n = int(warmup_half_lives * half_life)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4EA7]))
    lpns = rng.integers(0, logical_pages, size=n)
    age = np.arange(n, 0, -1, dtype=np.float64) - 1.0
    w = 0.5 ** (age / half_life)
    scores = np.bincount(lpns // extent_pages, weights=w, minlength=n_ext)
    hot = float(np.quantile(scores, hot_quantile))
    warm = float(np.quantile(scores, warm_quantile))
    if not hot > warm > 0:
        raise ValueError("degenerate heat thresholds; increase the warmup window")
    return hot, warm


_TEMPERATURE_RULES = {
    (FlashMode.QLC, Heat.HOT): FlashMode.SLC,
    (FlashMode.QLC, Heat.WARM): FlashMode.TLC,
    (FlashMode.TLC, Heat.HOT): FlashMode.SLC,
}


def migration_decision(
    kind: PolicyKind,
    heat: Heat,
    retries: int,
    current: FlashMode,
    stage: ReliabilityStage,
    th: PolicyThresholds,
) -> FlashMode | None:
    """Target mode for the block holding a just-read page, or None to stay put."""
    if kind is PolicyKind.BASELINE:
        return None
    target = _TEMPERATURE_RULES.get((current, heat))
    if target is None or kind is PolicyKind.HOTNESS:
        return target
    # RARO: the same table, gated on the observed retry count
    if heat is Heat.HOT:
        return target if retries >= th.r1 else None
    return target if retries >= th.r2(stage) else None


@dataclass
class PolicyStats:
    requested: int = 0
    deduplicated: int = 0


class Policy:
    """Read-completion hook: heat update, classification, decision, dedup."""

    def __init__(self, kind: PolicyKind, thresholds: PolicyThresholds, heat: HeatState, pe_limits: dict):
        self.kind = PolicyKind(kind)
        self.thresholds = thresholds
        self.heat = heat
        self.pending: dict[int, FlashMode] = {}
        self.stats = PolicyStats()
        self._bounds = {m: stage_bounds(lim) for m, lim in pe_limits.items()}

    def stage_of(self, mode: FlashMode, pe_cycles: int) -> ReliabilityStage:
        (_, young_hi), (_, middle_hi), _ = self._bounds[mode]
        if pe_cycles <= young_hi:
            return ReliabilityStage.YOUNG
        if pe_cycles <= middle_hi:
            return ReliabilityStage.MIDDLE
        return ReliabilityStage.OLD

    def on_read_complete(self, lpn: int, block: int | None, retries: int, mode: FlashMode, pe_cycles: int):
        """Returns (block, target) when a new conversion gets queued, else None."""
        heat = self.heat
        score = heat.record_access(lpn)
        if block is None or self.kind is PolicyKind.BASELINE:
            return None
        level = heat.classify_score(score)
        if level is Heat.COLD:
            return None
        target = migration_decision(
            self.kind, level, retries, mode, self.stage_of(mode, pe_cycles), self.thresholds
        )
        if target is None:
            return None
        if block in self.pending:
            self.stats.deduplicated += 1
            return None
        self.pending[block] = target
        self.stats.requested += 1
        return block, target

    def take_pending(self) -> list[tuple[int, FlashMode]]:
        out = list(self.pending.items())
        self.pending.clear()
        return out


def reclaim_cold(ftl, heat: HeatState, watermark_pages: float | None = None) -> list[tuple[int, FlashMode]]:
    """Fold all-cold SLC/TLC blocks back to QLC while free space is short.

    ``watermark_pages`` defaults to 10% of the initial usable capacity.
    Blocks are taken in order of capacity they return, so the list is the
    smallest one that covers the deficit.
    """
    if watermark_pages is None:
        watermark_pages = 0.10 * ftl.initial_usable_pages
    deficit = watermark_pages - ftl.free_pages
    if deficit <= 0:
        return []
    qlc_ppb = ftl.model.modes[FlashMode.QLC].pages_per_block
    candidates = []
    for blk in ftl.blocks:
        if blk.mode == FlashMode.QLC:
            continue
        lpns = [blk.page_lpn[i] for i in range(blk.wp) if blk.valid[i]]
        if any(heat.classify(lpn) is not Heat.COLD for lpn in lpns):
            continue
        gain = qlc_ppb - blk.ppb + (blk.wp - blk.n_valid)
        candidates.append((-gain, blk.n_valid, blk.block_id))
    candidates.sort()
    out = []
    covered = 0
    for neg_gain, _, block_id in candidates:
        if covered >= deficit:
            break
        out.append((block_id, FlashMode.QLC))
        covered += -neg_gain
    return out

