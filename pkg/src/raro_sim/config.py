"""Experiment configuration: YAML sections mirroring the simulator modules.

Every default comes from the device tables, so a minimal file only needs
``policy``, ``stage`` and ``workload``.  Unknown keys are rejected with the
full dotted key path in the message.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .flash import (
    DEFAULT_QLC_RBER,
    SLC_RBER_SCALE,
    TLC_RBER_SCALE,
    FlashMode,
    FlashModel,
    ModeSpec,
    RberParams,
    ReliabilityStage,
    RetryParams,
    VariationParams,
    default_mode_specs,
)
from .ftl import FTL, Geometry
from .policy import HeatState, Policy, PolicyKind, PolicyThresholds, uniform_heat_thresholds
from .workload import GIB, WorkloadSpec


class ConfigError(ValueError):
    pass


@dataclass
class ModeConfig:
    bits_per_cell: int
    pages_per_block: int
    read_latency_us: float
    write_latency_us: float
    erase_latency_ms: float
    pe_limit: int
    n_sense: float

    def spec(self, mode: FlashMode) -> ModeSpec:
        return ModeSpec(mode, **dataclasses.asdict(self))


def _mode_default(mode: FlashMode):
    s = default_mode_specs()[mode]
    return lambda: ModeConfig(**{f.name: getattr(s, f.name) for f in dataclasses.fields(ModeConfig)})


@dataclass
class ModesConfig:
    slc: ModeConfig = field(default_factory=_mode_default(FlashMode.SLC))
    tlc: ModeConfig = field(default_factory=_mode_default(FlashMode.TLC))
    qlc: ModeConfig = field(default_factory=_mode_default(FlashMode.QLC))


@dataclass
class RberConfig:
    qlc: RberParams = field(default_factory=lambda: DEFAULT_QLC_RBER)
    # None: derive from qlc with the scale below
    tlc: RberParams | None = None
    slc: RberParams | None = None
    tlc_scale: float = TLC_RBER_SCALE
    slc_scale: float = SLC_RBER_SCALE


@dataclass
class FlashConfig:
    retention_scale: float = 1.0


@dataclass
class FtlConfig:
    initial_mode: str = "qlc"
    # logical space; None means exactly the workload dataset
    logical_bytes: int | None = None
    fill_fraction: float = 1.0
    gc_low: float = 0.05
    gc_high: float = 0.10
    # consecutive allocations per LUN before moving on; one heat extent by default
    stripe_pages: int = 256


@dataclass
class PolicyConfig:
    kind: str = "raro"
    r1: int = 1
    r2_young: int = 5
    r2_middle: int = 7
    r2_old: int = 11


@dataclass
class HeatConfig:
    extent_pages: int = 256
    half_life: float = 100_000
    # fixed thresholds; when unset they come from a uniform warmup window
    theta_hot: float | None = None
    theta_warm: float | None = None
    hot_quantile: float = 0.98
    warm_quantile: float = 0.80
    warmup_half_lives: float = 5.0


@dataclass
class ReclaimConfig:
    enabled: bool = False
    interval: int = 10_000
    watermark: float = 0.10


@dataclass
class ExperimentConfig:
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    stage: str = "old"
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    seed: int = 0
    geometry: Geometry = field(default_factory=Geometry)
    modes: ModesConfig = field(default_factory=ModesConfig)
    rber: RberConfig = field(default_factory=RberConfig)
    retry: RetryParams = field(default_factory=RetryParams)
    variation: VariationParams = field(default_factory=VariationParams)
    flash: FlashConfig = field(default_factory=FlashConfig)
    ftl: FtlConfig = field(default_factory=FtlConfig)
    heat: HeatConfig = field(default_factory=HeatConfig)
    reclaim: ReclaimConfig = field(default_factory=ReclaimConfig)
    out: str = "out"

    def __post_init__(self):
        validate(self)

    # -------------------------------------------------------------- builders
    @property
    def stage_enum(self) -> ReliabilityStage:
        return ReliabilityStage.parse(self.stage)

    @property
    def policy_kind(self) -> PolicyKind:
        return PolicyKind.parse(self.policy.kind)

    def thresholds(self) -> PolicyThresholds:
        p = self.policy
        return PolicyThresholds(p.r1, p.r2_young, p.r2_middle, p.r2_old)

    def mode_specs(self) -> dict[FlashMode, ModeSpec]:
        return {m: getattr(self.modes, m.name.lower()).spec(m) for m in FlashMode}

    def rber_params(self) -> dict[FlashMode, RberParams]:
        r = self.rber
        return {
            FlashMode.QLC: r.qlc,
            FlashMode.TLC: r.tlc if r.tlc is not None else r.qlc.scaled(r.tlc_scale),
            FlashMode.SLC: r.slc if r.slc is not None else r.qlc.scaled(r.slc_scale),
        }

    def flash_model(self) -> FlashModel:
        return FlashModel(self.mode_specs(), self.rber_params(), self.retry, self.variation, self.flash.retention_scale)

    def dataset_pages(self) -> int:
        return self.workload.dataset_pages(self.geometry.page_size_kib)

    def logical_pages(self) -> int:
        if self.ftl.logical_bytes is None:
            return self.dataset_pages()
        return self.ftl.logical_bytes // self.geometry.page_bytes

    def build_ftl(self) -> FTL:
        return FTL(
            self.geometry,
            self.flash_model(),
            FlashMode.parse(self.ftl.initial_mode),
            self.logical_pages(),
            self.ftl.gc_low,
            self.ftl.gc_high,
            self.ftl.stripe_pages,
        )

    def heat_thresholds(self) -> tuple[float, float]:
        h = self.heat
        if h.theta_hot is not None and h.theta_warm is not None:
            return h.theta_hot, h.theta_warm
        return uniform_heat_thresholds(
            self.dataset_pages(), h.extent_pages, h.half_life, self.seed,
            h.hot_quantile, h.warm_quantile, h.warmup_half_lives,
        )

    def build_policy(self, ftl: FTL) -> Policy:
        hot, warm = self.heat_thresholds()
        heat = HeatState(ftl.logical_pages, self.heat.extent_pages, self.heat.half_life, hot, warm)
        limits = {m: s.pe_limit for m, s in ftl.model.modes.items()}
        return Policy(self.policy_kind, self.thresholds(), heat, limits)

    # --------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with top-level sections swapped; nested dicts are merged."""
        data = self.to_dict()
        _merge(data, changes)
        return from_dict(data)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (FlashMode, ReliabilityStage)):
        return obj.name.lower()
    if isinstance(obj, PolicyKind):
        return obj.value
    return obj


def _merge(base: dict, changes: dict):
    for k, v in changes.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


_NESTED = {
    "policy": PolicyConfig,
    "workload": WorkloadSpec,
    "geometry": Geometry,
    "retry": RetryParams,
    "variation": VariationParams,
    "flash": FlashConfig,
    "ftl": FtlConfig,
    "heat": HeatConfig,
    "reclaim": ReclaimConfig,
}


def _build(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key '{path}.{key}'")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _build_modes(data) -> ModesConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("modes: expected a mapping")
    out = {}
    for key, value in data.items():
        if key not in ("slc", "tlc", "qlc"):
            raise ConfigError(f"unknown key 'modes.{key}'")
        base = dataclasses.asdict(_mode_default(FlashMode.parse(key))())
        value = value or {}
        for k in value:
            if k not in base:
                raise ConfigError(f"unknown key 'modes.{key}.{k}'")
        base.update(value)
        mc = ModeConfig(**base)
        try:
            mc.spec(FlashMode.parse(key))
        except ValueError as exc:
            field_name = str(exc).split(": ", 1)[-1].split(" ", 1)[0]
            raise ConfigError(f"modes.{key}.{field_name}: {exc}") from None
        out[key] = mc
    return ModesConfig(**out)


def _build_rber(data) -> RberConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("rber: expected a mapping")
    out = {}
    for key, value in data.items():
        if key in ("tlc_scale", "slc_scale"):
            out[key] = float(value)
        elif key in ("qlc", "tlc", "slc"):
            out[key] = None if value is None else _build(RberParams, value, f"rber.{key}")
        else:
            raise ConfigError(f"unknown key 'rber.{key}'")
    return RberConfig(**out)


def from_dict(data: dict | None) -> ExperimentConfig:
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key '{key}'")
    kwargs = {}
    for key, value in data.items():
        if key == "policy" and isinstance(value, str):
            value = {"kind": value}
        if key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, key)
        elif key == "modes":
            kwargs[key] = _build_modes(value)
        elif key == "rber":
            kwargs[key] = _build_rber(value)
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return from_dict(data)


def validate(cfg: ExperimentConfig):
    try:
        ReliabilityStage.parse(cfg.stage)
    except ValueError:
        raise ConfigError(f"stage: expected young, middle or old, got {cfg.stage!r}") from None
    try:
        PolicyKind.parse(cfg.policy.kind)
    except ValueError as exc:
        raise ConfigError(f"policy.kind: {exc}") from None
    try:
        cfg.thresholds()
    except ValueError as exc:
        raise ConfigError(f"policy: {exc}") from None
    try:
        FlashMode.parse(cfg.ftl.initial_mode)
    except ValueError as exc:
        raise ConfigError(f"ftl.initial_mode: {exc}") from None
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed: must be a non-negative integer")
    specs = cfg.mode_specs()
    ppb = [specs[m].pages_per_block for m in (FlashMode.SLC, FlashMode.TLC, FlashMode.QLC)]
    if not ppb[0] <= ppb[1] <= ppb[2]:
        raise ConfigError("modes: pages_per_block must not decrease with density")
    f = cfg.ftl
    if not 0.0 <= f.fill_fraction <= 1.0:
        raise ConfigError("ftl.fill_fraction: must lie in [0, 1]")
    if f.stripe_pages < 1:
        raise ConfigError("ftl.stripe_pages: must be >= 1")
    if not 0.0 <= f.gc_low <= f.gc_high < 1.0:
        raise ConfigError("ftl.gc_low / ftl.gc_high: need 0 <= gc_low <= gc_high < 1")
    page_bytes = cfg.geometry.page_bytes
    capacity = cfg.geometry.n_blocks * specs[FlashMode.parse(f.initial_mode)].pages_per_block * page_bytes
    logical = cfg.workload.dataset_bytes if f.logical_bytes is None else f.logical_bytes
    if cfg.workload.dataset_bytes < page_bytes:
        raise ConfigError("workload.dataset_bytes: smaller than one page")
    if cfg.workload.dataset_bytes > logical:
        raise ConfigError("workload.dataset_bytes: does not fit the logical space")
    if logical > capacity:
        raise ConfigError(f"ftl.logical_bytes: {logical} exceeds device capacity {capacity}")
    h = cfg.heat
    if (h.theta_hot is None) != (h.theta_warm is None):
        raise ConfigError("heat: set both theta_hot and theta_warm, or neither")
    if h.theta_hot is not None and not h.theta_hot > h.theta_warm > 0:
        raise ConfigError("heat: need theta_hot > theta_warm > 0")
    if not 0 < h.warm_quantile < h.hot_quantile < 1:
        raise ConfigError("heat: need 0 < warm_quantile < hot_quantile < 1")
    if h.half_life <= 0 or h.extent_pages < 1:
        raise ConfigError("heat: half_life and extent_pages must be positive")
    if cfg.reclaim.interval < 1 or not 0 < cfg.reclaim.watermark < 1:
        raise ConfigError("reclaim: need interval >= 1 and 0 < watermark < 1")


def apply_overrides(cfg: ExperimentConfig, policy=None, stage=None, seed=None, out=None) -> ExperimentConfig:
    """CLI flags first, then RARO_SEED / RARO_OUT from the environment."""
    changes: dict = {}
    if seed is None and os.environ.get("RARO_SEED"):
        seed = int(os.environ["RARO_SEED"])
    if out is None and os.environ.get("RARO_OUT"):
        out = os.environ["RARO_OUT"]
    if policy is not None:
        changes["policy"] = {"kind": str(policy)}
    if stage is not None:
        changes["stage"] = str(stage)
    if seed is not None:
        changes["seed"] = int(seed)
    if out is not None:
        changes["out"] = str(out)
    return cfg.replace(**changes) if changes else cfg


__all__ = ["ConfigError", "ExperimentConfig", "GIB", "apply_overrides", "from_dict", "load", "validate"]
