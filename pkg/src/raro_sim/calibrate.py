"""Fit QLC RBER coefficients so per-stage retry counts land in target ranges.

The fit is analytic: for sampled pages (their variation factors) and a set
of representative read-disturb counts, retry counts follow directly from
the RBER model.  A short FTL simulation then re-checks the winner.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .flash import (
    FlashMode,
    FlashModel,
    RberParams,
    ReliabilityStage,
    default_rber_params,
    page_variation_table,
    retry_count_array,
    stage_midpoint,
)

STAGES = (ReliabilityStage.YOUNG, ReliabilityStage.MIDDLE, ReliabilityStage.OLD)
DEFAULT_TARGETS = {
    ReliabilityStage.YOUNG: (1, 10),
    ReliabilityStage.MIDDLE: (5, 13),
    ReliabilityStage.OLD: (11, 16),
}
DISTURB_READS = (0, 100, 1_000, 10_000)
R_REF = 10_000.0

# search grid; every combination fully determines an RberParams
K_GRID = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0)
EPS_FRAC_GRID = (0.0, 0.01, 0.02, 0.05, 0.1, 0.2)
P_GRID = (0.5, 1.0)
Q_GRID = (0.5, 1.0)
DISTURB_FRAC_GRID = (0.02, 0.05, 0.1)
LEVEL_STEPS = 9

# retention is kept out of the fit; this leaves it visible only for very old data
RETENTION = dict(beta=1e-9, m=1.0, n=1.0)


class CalibrationError(ValueError):
    def __init__(self, message: str, achieved: dict):
        super().__init__(message)
        self.achieved = achieved


@dataclass
class StageFit:
    stage: str
    cycles: int
    target: tuple[int, int]
    coverage: float
    achieved: tuple[int, int]  # 2.5th / 97.5th percentile retry count
    median: float
    hist: list = field(default_factory=list)


@dataclass
class CalibrationResult:
    params: RberParams
    stages: list[StageFit]
    sim_stages: list[StageFit] = field(default_factory=list)

    def fragment(self) -> dict:
        return {"rber": {"qlc": asdict(self.params)}}

    def min_coverage(self) -> float:
        return min(s.coverage for s in self.stages)


def _raw_bounds(model: FlashModel, lo: int, hi: int) -> tuple[float, float]:
    """Raw-bit interval (a, b] whose retry count lies in [lo, hi]."""
    e = model.retry.e_ldpc
    keep = 1.0 - model.retry.delta
    a = 0.0 if lo <= 0 else e / keep ** (lo - 1)
    return (-1.0 if lo <= 0 else a), e / keep**hi


def _stage_cycles(model: FlashModel) -> dict:
    limit = model.modes[FlashMode.QLC].pe_limit
    return {s: stage_midpoint(s, limit) for s in STAGES}


def sample_factors(model: FlashModel, n_pages: int) -> np.ndarray:
    ppb = model.modes[FlashMode.QLC].pages_per_block
    n_blocks = max(1, -(-n_pages // ppb))
    return np.sort(page_variation_table(n_blocks, ppb, model.variation).ravel()[:n_pages])


def stage_retries(params: RberParams, model: FlashModel, cycles: float, factors: np.ndarray,
                  reads=DISTURB_READS) -> np.ndarray:
    """Retry counts of every (page, read count) pair at ``cycles`` P/E."""
    scale = model.raw_bits_scale(FlashMode.QLC)
    c = float(cycles)
    out = []
    for r in reads:
        base = params.epsilon + params.alpha_wear * c**params.k
        if r > 0:
            base += params.gamma * c**params.p * float(r) ** params.q
        base = min(base, 0.5)
        out.append(retry_count_array(model.retry, scale * base * factors))
    return np.concatenate(out)


def _fit_stage(stage, cycles, target, retries) -> StageFit:
    lo, hi = target
    cov = float(np.mean((retries >= lo) & (retries <= hi)))
    p_lo, p_hi = np.percentile(retries, [2.5, 97.5], method="nearest")
    hist = np.bincount(np.minimum(retries, 31), minlength=32).tolist()
    return StageFit(str(stage), int(cycles), (lo, hi), cov, (int(p_lo), int(p_hi)), float(np.median(retries)), hist)


def evaluate(params: RberParams, model: FlashModel | None = None, targets=None,
             n_pages: int = 65_536, reads=DISTURB_READS) -> list[StageFit]:
    """Per-stage coverage and histogram of ``params`` at stage-midpoint wear."""
    model = model or FlashModel()
    targets = targets or DEFAULT_TARGETS
    factors = sample_factors(model, n_pages)
    cyc = _stage_cycles(model)
    return [_fit_stage(s, cyc[s], targets[s], stage_retries(params, model, cyc[s], factors, reads)) for s in STAGES]


def _candidates(model: FlashModel, targets):
    """Yield (params, level) over the search grid, level being the old-stage base raw bits."""
    cyc = _stage_cycles(model)
    c_old = float(cyc[ReliabilityStage.OLD])
    scale = model.raw_bits_scale(FlashMode.QLC)
    lo, hi = targets[ReliabilityStage.OLD]
    a, b = _raw_bounds(model, lo, hi)
    a = max(a, model.retry.e_ldpc)
    # base level of the old stage, spread geometrically over the raw band
    lo_lvl = a / model.variation.v_min
    hi_lvl = b / model.variation.v_max
    if hi_lvl <= lo_lvl:
        lo_lvl, hi_lvl = a, b
    levels = np.geomspace(lo_lvl, hi_lvl, LEVEL_STEPS + 2)[1:-1]
    for k, ef, p, q, df, level in itertools.product(K_GRID, EPS_FRAC_GRID, P_GRID, Q_GRID, DISTURB_FRAC_GRID, levels):
        wear_old = 1.0  # in units of alpha * c_old**k, solved below
        # level = scale * (eps + alpha c^k + gamma c^p R_REF^q / 2) with the disturb term at half weight
        total = wear_old * (1.0 + ef + df / 2.0)
        alpha = float(level) / scale / total / c_old**k
        eps = ef * alpha * c_old**k
        gamma = df * alpha * c_old**k / (c_old**p * R_REF**q)
        yield RberParams(epsilon=eps, alpha_wear=alpha, k=k, gamma=gamma, p=p, q=q, **RETENTION)


def _score(params: RberParams, model: FlashModel, targets, vs: np.ndarray, reads) -> tuple:
    """Fast analytic coverage via the sorted factor sample."""
    scale = model.raw_bits_scale(FlashMode.QLC)
    cyc = _stage_cycles(model)
    n = len(vs)
    v_lo, v_hi = np.quantile(vs, [0.025, 0.975])
    covs = []
    margin = math.inf
    typical = []
    keep = 1.0 - model.retry.delta
    e = model.retry.e_ldpc
    for s in STAGES:
        lo, hi = targets[s]
        a, b = _raw_bounds(model, lo, hi)
        c = float(cyc[s])
        hits = 0
        for r in reads:
            base = params.epsilon + params.alpha_wear * c**params.k
            if r > 0:
                base += params.gamma * c**params.p * float(r) ** params.q
            base = scale * min(base, 0.5)
            # pages with a < base * v <= b
            i0 = np.searchsorted(vs, a / base, side="right") if a > 0 else 0
            i1 = np.searchsorted(vs, b / base, side="right")
            hits += max(0, i1 - i0)
            upper = math.log(b / (base * v_hi))
            lower = math.log(base * v_lo / a) if a > 0 else math.inf
            margin = min(margin, upper, lower)
        covs.append(hits / (n * len(reads)))
        mid = scale * (params.epsilon + params.alpha_wear * c**params.k + params.gamma * c**params.p * 1000.0**params.q)
        typical.append(0 if mid <= e else math.ceil(math.log(mid / e) / -math.log(keep)))
    monotone = typical[0] < typical[1] < typical[2]
    return monotone, min(covs), covs, margin


def calibrate(targets=None, coverage: float = 0.95, model: FlashModel | None = None,
              n_search: int = 4096, n_verify: int = 65_536, reads=DISTURB_READS,
              simulate: bool = True) -> CalibrationResult:
    """Grid search for QLC RBER coefficients.

    Wear must raise the typical retry count from young to middle to old; a
    target set that contradicts that (e.g. the same narrow range for every
    stage) is reported as infeasible together with the closest ranges found.
    """
    model = model or FlashModel()
    targets = {ReliabilityStage(k): tuple(v) for k, v in (targets or DEFAULT_TARGETS).items()}
    if set(targets) != set(STAGES):
        raise ValueError("targets must name young, middle and old")
    for s, (lo, hi) in targets.items():
        if not 0 <= lo <= hi:
            raise ValueError(f"target range for {s} must satisfy 0 <= lo <= hi")
    vs = sample_factors(model, n_search)
    best = None
    best_key = None
    for params in _candidates(model, targets):
        monotone, cmin, covs, margin = _score(params, model, targets, vs, reads)
        if not monotone:
            continue
        key = (round(cmin, 6), round(sum(covs), 6), margin)
        if best_key is None or key > best_key:
            best, best_key = params, key
    if best is None:
        raise CalibrationError(
            "no coefficients keep retries increasing with wear for these targets",
            {str(s): None for s in STAGES},
        )
    stages = evaluate(best, model, targets, n_verify, reads)
    achieved = {s.stage: {"range": s.achieved, "coverage": s.coverage} for s in stages}
    if min(s.coverage for s in stages) < coverage:
        detail = ", ".join(f"{s.stage} {s.achieved[0]}-{s.achieved[1]} ({s.coverage:.1%})" for s in stages)
        raise CalibrationError(f"targets infeasible at {coverage:.0%} coverage; nearest: {detail}", achieved)
    result = CalibrationResult(best, stages)
    if simulate:
        result.sim_stages = verify_by_simulation(best, model, targets)
    return result


def verify_by_simulation(params: RberParams, model: FlashModel | None = None, targets=None,
                         blocks: int = 8) -> list[StageFit]:
    """Read every page of a small preconditioned device once per stage."""
    from .engine import precondition
    from .ftl import FTL, Geometry

    base = model or FlashModel()
    targets = targets or DEFAULT_TARGETS
    sim_model = FlashModel(
        modes=base.modes, rber=default_rber_params(params), retry=base.retry,
        variation=base.variation, retention_scale=base.retention_scale,
    )
    geo = Geometry(channels=1, luns_per_channel=1, planes_per_lun=1, blocks_per_plane=blocks)
    out = []
    for s in STAGES:
        ftl = FTL(geo, sim_model)
        precondition(ftl, stage=s)
        retries = np.array([ftl.host_read(lpn).retries for lpn in range(ftl.logical_pages)])
        cycles = ftl.blocks[0].pe_cycles
        out.append(_fit_stage(s, cycles, targets[s], retries))
    return out
