"""Flash reliability model: RBER, read-retry counts, reliability stages.

Everything here is a pure function of its arguments.  The simulator caches
the per-block parts of the RBER sum itself; see :mod:`raro_sim.ftl`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

# Largest representable RBER; the model output is clamped into [0, 0.5).
RBER_MAX = math.nextafter(0.5, 0.0)

# Relative slack used when testing raw_bits * (1 - delta)^n <= e_ldpc, so that
# mathematically exact ties (360 bits at delta = 0.8 is exactly 72 after one
# retry) are not lost to rounding.
_TIE_RTOL = 1e-12


class FlashMode(IntEnum):
    """Cell programming mode; the integer value is bits per cell."""

    SLC = 1
    TLC = 3
    QLC = 4

    @classmethod
    def parse(cls, value: "str | FlashMode") -> "FlashMode":
        if isinstance(value, FlashMode):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown flash mode {value!r}") from None

    def __str__(self) -> str:
        return self.name


class ReliabilityStage(IntEnum):
    YOUNG = 0
    MIDDLE = 1
    OLD = 2

    @classmethod
    def parse(cls, value: "str | ReliabilityStage") -> "ReliabilityStage":
        if isinstance(value, ReliabilityStage):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown reliability stage {value!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ModeSpec:
    mode: FlashMode
    bits_per_cell: int
    pages_per_block: int
    read_latency_us: float
    write_latency_us: float
    erase_latency_ms: float
    pe_limit: int
    n_sense: float

    def __post_init__(self):
        if self.pages_per_block < 1:
            raise ValueError(f"{self.mode}: pages_per_block must be >= 1")
        if self.n_sense < 1:
            raise ValueError(f"{self.mode}: n_sense must be >= 1")
        if self.pe_limit < 3:
            raise ValueError(f"{self.mode}: pe_limit must be >= 3")
        for name in ("read_latency_us", "write_latency_us", "erase_latency_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{self.mode}: {name} must be > 0")

    @property
    def erase_latency_us(self) -> float:
        return self.erase_latency_ms * 1000.0


def default_mode_specs() -> dict[FlashMode, ModeSpec]:
    """SLC/TLC/QLC characteristics of the emulated device.

    ``n_sense`` is the mean number of reference-voltage comparisons per
    logical page read under standard Gray coding (1, 7 over 3 pages, 15 over
    4 pages).
    """
    return {
        FlashMode.SLC: ModeSpec(FlashMode.SLC, 1, 256, 20.0, 160.0, 2.0, 100_000, 1.0),
        FlashMode.TLC: ModeSpec(FlashMode.TLC, 3, 768, 66.0, 730.0, 3.0, 3_000, 7.0 / 3.0),
        FlashMode.QLC: ModeSpec(FlashMode.QLC, 4, 1024, 140.0, 3102.0, 10.0, 1_000, 15.0 / 4.0),
    }


@dataclass(frozen=True)
class RberParams:
    """Coefficients of the wear / retention / read-disturb RBER sum."""

    epsilon: float = 0.0
    alpha_wear: float = 0.0
    k: float = 1.0
    beta: float = 0.0
    m: float = 1.0
    n: float = 1.0
    gamma: float = 0.0
    p: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        for name in ("epsilon", "alpha_wear", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("k", "m", "n", "p", "q"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def scaled(self, factor: float) -> "RberParams":
        """Same shape with every coefficient multiplied by ``factor``."""
        return replace(
            self,
            epsilon=self.epsilon * factor,
            alpha_wear=self.alpha_wear * factor,
            beta=self.beta * factor,
            gamma=self.gamma * factor,
        )


@dataclass(frozen=True)
class RetryParams:
    alpha_sense: float = 0.5
    delta: float = 0.2
    e_ldpc: float = 72.0
    codeword_bits: int = 8192

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.e_ldpc <= 0:
            raise ValueError("e_ldpc must be > 0")
        if self.codeword_bits <= 0:
            raise ValueError("codeword_bits must be > 0")
        if self.alpha_sense <= 0:
            raise ValueError("alpha_sense must be > 0")


# Shipped QLC coefficients, produced by ``raro-sim calibrate`` against the
# per-stage retry ranges (young 1-10, middle 5-13, old 11-16).
DEFAULT_QLC_RBER = RberParams(
    epsilon=0.01588735358349411,
    alpha_wear=6.13735121532867e-07,
    k=1.75,
    beta=1e-09,
    m=1.0,
    n=1.0,
    gamma=5.501340624566123e-07,
    p=0.5,
    q=0.5,
)

# Lower-density modes on the same silicon see far fewer errors; converted TLC
# blocks should need at most one retry and SLC none.
TLC_RBER_SCALE = 0.05
SLC_RBER_SCALE = 0.005


def default_rber_params(qlc: RberParams | None = None) -> dict[FlashMode, RberParams]:
    qlc = DEFAULT_QLC_RBER if qlc is None else qlc
    return {
        FlashMode.SLC: qlc.scaled(SLC_RBER_SCALE),
        FlashMode.TLC: qlc.scaled(TLC_RBER_SCALE),
        FlashMode.QLC: qlc,
    }


def _pw(x: float, e: float) -> float:
    # a zero input switches its term off regardless of the exponent
    return x**e if x > 0 else 0.0


def rber(params: RberParams, cycles: float, hours: float, reads: float) -> float:
    """Raw bit error rate after ``cycles`` P/E, ``hours`` retention and ``reads`` reads."""
    if cycles < 0 or hours < 0 or reads < 0:
        raise ValueError("rber inputs must be non-negative")
    value = (
        params.epsilon
        + params.alpha_wear * _pw(cycles, params.k)
        + params.beta * _pw(cycles, params.m) * _pw(hours, params.n)
        + params.gamma * _pw(cycles, params.p) * _pw(reads, params.q)
    )
    if not value > 0.0:  # also catches nan
        return 0.0
    return min(value, RBER_MAX)


def expected_error_bits(retry: RetryParams, rber_value: float, n_sense: float) -> float:
    """Expected raw error bits in one LDPC codeword."""
    return retry.alpha_sense * rber_value * n_sense * retry.codeword_bits


def retry_count(retry: RetryParams, raw_bits: float) -> int:
    """Smallest n with ``raw_bits * (1 - delta)**n <= e_ldpc``."""
    e = retry.e_ldpc
    if raw_bits <= e:
        return 0
    keep = 1.0 - retry.delta
    limit = e * (1.0 + _TIE_RTOL)
    n = max(1, math.ceil(math.log(raw_bits / e) / -math.log(keep) - 1e-9))
    while raw_bits * keep**n > limit:
        n += 1
    while n > 1 and raw_bits * keep ** (n - 1) <= limit:
        n -= 1
    return n


def retry_count_array(retry: RetryParams, raw_bits: np.ndarray) -> np.ndarray:
    """Vectorised :func:`retry_count` with identical tie handling."""
    raw = np.asarray(raw_bits, dtype=np.float64)
    e = retry.e_ldpc
    keep = 1.0 - retry.delta
    limit = e * (1.0 + _TIE_RTOL)
    with np.errstate(divide="ignore", invalid="ignore"):
        n = np.ceil(np.log(np.maximum(raw, e) / e) / -math.log(keep) - 1e-9)
    n = np.maximum(n, 1.0)
    for _ in range(3):
        up = raw * keep**n > limit
        n = np.where(up, n + 1, n)
        down = (n > 1) & (raw * keep ** (n - 1) <= limit)
        n = np.where(down, n - 1, n)
    return np.where(raw <= e, 0, n).astype(np.int64)


def stage_bounds(pe_limit: int) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    """Inclusive P/E ranges of the young, middle and old stages."""
    young_hi = pe_limit // 3
    middle_hi = 2 * pe_limit // 3
    return (0, young_hi), (young_hi + 1, middle_hi), (middle_hi + 1, pe_limit)


def stage_midpoint(stage: ReliabilityStage, pe_limit: int) -> int:
    lo, hi = stage_bounds(pe_limit)[stage]
    return (lo + hi + 1) // 2


def reliability_stage(pe_cycles: int, mode: FlashMode, pe_limit: int | None = None) -> ReliabilityStage:
    if pe_cycles < 0:
        raise ValueError("pe_cycles must be non-negative")
    if pe_limit is None:
        pe_limit = default_mode_specs()[FlashMode(mode)].pe_limit
    (_, young_hi), (_, middle_hi), _ = stage_bounds(pe_limit)
    if pe_cycles <= young_hi:
        return ReliabilityStage.YOUNG
    if pe_cycles <= middle_hi:
        return ReliabilityStage.MIDDLE
    return ReliabilityStage.OLD


def read_latency_with_retries(spec: ModeSpec, retries: int) -> float:
    """Each retry re-senses the whole page."""
    if retries < 0:
        raise ValueError("retries must be non-negative")
    return (1 + retries) * spec.read_latency_us


# --- per-page process variation -------------------------------------------

_M64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def _splitmix64_np(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@dataclass(frozen=True)
class VariationParams:
    v_min: float = 0.5
    v_max: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.v_min <= self.v_max:
            raise ValueError("need 0 < v_min <= v_max")


def _page_key(block_id, page_index, seed):
    return (block_id << 20) ^ page_index ^ ((seed & 0xFFFFFFFF) << 40)


def page_variation_factor(block_id: int, page_index: int, params: VariationParams = VariationParams()) -> float:
    """Deterministic multiplier in [v_min, v_max] for one physical page."""
    h = _splitmix64(_page_key(block_id, page_index, params.seed) & _M64)
    u = (h >> 11) * (1.0 / (1 << 53))
    return params.v_min + (params.v_max - params.v_min) * u


def page_variation_table(
    n_blocks: int, pages_per_block: int, params: VariationParams = VariationParams()
) -> np.ndarray:
    """``page_variation_factor`` for every (block, page), shape (n_blocks, pages_per_block)."""
    b = np.arange(n_blocks, dtype=np.uint64)[:, None]
    pg = np.arange(pages_per_block, dtype=np.uint64)[None, :]
    key = (b << np.uint64(20)) ^ pg ^ np.uint64((params.seed & 0xFFFFFFFF) << 40)
    h = _splitmix64_np(key)
    u = (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return params.v_min + (params.v_max - params.v_min) * u


@dataclass
class FlashModel:
    """Bundle of the per-mode constants the FTL needs to turn wear into retries."""

    modes: dict[FlashMode, ModeSpec] = field(default_factory=default_mode_specs)
    rber: dict[FlashMode, RberParams] = field(default_factory=default_rber_params)
    retry: RetryParams = field(default_factory=RetryParams)
    variation: VariationParams = field(default_factory=VariationParams)
    # simulated microseconds -> model hours, times this factor
    retention_scale: float = 1.0

    def raw_bits_scale(self, mode: FlashMode) -> float:
        """Factor turning RBER into expected error bits per codeword for ``mode``."""
        return expected_error_bits(self.retry, 1.0, self.modes[mode].n_sense)

    def page_retries(self, mode: FlashMode, cycles: float, hours: float, reads: float, factor: float = 1.0) -> int:
        r = rber(self.rber[mode], cycles, hours, reads)
        return retry_count(self.retry, self.raw_bits_scale(mode) * r * factor)
