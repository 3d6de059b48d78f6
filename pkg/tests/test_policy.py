import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from raro_sim.flash import FlashMode, ReliabilityStage
from raro_sim.ftl import FTL, Geometry
from raro_sim.policy import (
    Heat,
    HeatState,
    Policy,
    PolicyKind,
    PolicyThresholds,
    classify_heat,
    migration_decision,
    reclaim_cold,
    record_access,
    uniform_heat_thresholds,
)
from raro_sim.workload import zipf_lpns

TH = PolicyThresholds()
LIMITS = {FlashMode.SLC: 100_000, FlashMode.TLC: 3000, FlashMode.QLC: 1000}
heats = st.sampled_from(list(Heat))
modes = st.sampled_from(list(FlashMode))
stages = st.sampled_from(list(ReliabilityStage))


def make_policy(kind="raro", theta_hot=10.0, theta_warm=5.0, pages=4096):
    return Policy(PolicyKind.parse(kind), TH, HeatState(pages, 256, 100_000, theta_hot, theta_warm), LIMITS)


# --- thresholds ----------------------------------------------------------------

def test_default_thresholds():
    assert TH.r1 == 1
    assert [TH.r2(s) for s in ReliabilityStage] == [5, 7, 11]


@pytest.mark.parametrize("kw", [dict(r1=0), dict(r2_young=0), dict(r2_young=8, r2_middle=7)])
def test_threshold_validation(kw):
    with pytest.raises(ValueError):
        PolicyThresholds(**kw)


# --- heat -------------------------------------------------------------------------

def test_single_access_scores_one():
    h = HeatState(1024, 256, 100_000, 2.0, 1.0)
    record_access(h, 300)
    assert h.score(300) == 1.0
    assert h.score(0) == 0 and h.score(600) == 0


def test_more_accesses_score_higher():
    h = HeatState(1024, 256, 1000, 2.0, 1.0)
    for _ in range(100):
        h.record_access(0)
    h.record_access(256)
    assert h.score(0) > h.score(256)


def test_half_life_decay():
    h = HeatState(1024, 256, 1000, 2.0, 1.0)
    for _ in range(8):
        h.record_access(0)
    s = h.score(0)
    h.advance(1000)
    assert h.score(0) == pytest.approx(s / 2, rel=1e-15)


def test_classification_boundaries():
    h = HeatState(1024, 256, 1000, theta_hot=4.0, theta_warm=2.0)
    assert classify_heat(h, 0) is Heat.COLD
    assert h.classify_score(4.0) is Heat.HOT
    assert h.classify_score(2.0) is Heat.WARM
    assert h.classify_score(1.999) is Heat.COLD


@given(st.floats(0, 100), st.floats(0, 100))
def test_classification_monotone(a, b):
    h = HeatState(16, 4, 10, 10.0, 5.0)
    lo, hi = sorted((a, b))
    assert h.classify_score(lo) <= h.classify_score(hi)


def test_uniform_thresholds_ordered_and_seeded():
    hot, warm = uniform_heat_thresholds(524_288, seed=1)
    assert hot > warm > 0
    assert (hot, warm) == uniform_heat_thresholds(524_288, seed=1)


def test_top_zipf_extent_is_hot():
    n = 524_288
    hot, warm = uniform_heat_thresholds(n)
    h = HeatState(n, 256, 100_000, hot, warm)
    lpns = zipf_lpns(n, 1.2, 1_000_000, seed=0)
    for lpn in lpns.tolist():
        h.record_access(lpn)
    # rank 1 sits behind the seeded permutation; locate its extent from the counts
    top_extent = int(np.bincount(lpns // 256).argmax())
    assert h.classify(top_extent * 256) is Heat.HOT


# --- decisions ------------------------------------------------------------------------

@pytest.mark.parametrize(
    "kind, heat, retries, mode, stage, want",
    [
        ("raro", Heat.HOT, 1, FlashMode.QLC, ReliabilityStage.YOUNG, FlashMode.SLC),
        ("raro", Heat.HOT, 1, FlashMode.QLC, ReliabilityStage.OLD, FlashMode.SLC),
        ("raro", Heat.WARM, 7, FlashMode.QLC, ReliabilityStage.MIDDLE, FlashMode.TLC),
        ("raro", Heat.WARM, 6, FlashMode.QLC, ReliabilityStage.MIDDLE, None),
        ("raro", Heat.HOT, 0, FlashMode.QLC, ReliabilityStage.YOUNG, None),
        ("raro", Heat.HOT, 0, FlashMode.TLC, ReliabilityStage.YOUNG, None),
        ("raro", Heat.HOT, 1, FlashMode.TLC, ReliabilityStage.YOUNG, FlashMode.SLC),
        ("raro", Heat.COLD, 16, FlashMode.QLC, ReliabilityStage.OLD, None),
        ("hotness", Heat.HOT, 0, FlashMode.QLC, ReliabilityStage.YOUNG, FlashMode.SLC),
        ("hotness", Heat.WARM, 0, FlashMode.QLC, ReliabilityStage.YOUNG, FlashMode.TLC),
        ("hotness", Heat.HOT, 0, FlashMode.TLC, ReliabilityStage.YOUNG, FlashMode.SLC),
        ("hotness", Heat.HOT, 0, FlashMode.SLC, ReliabilityStage.YOUNG, None),
        ("hotness", Heat.WARM, 9, FlashMode.TLC, ReliabilityStage.OLD, None),
        ("baseline", Heat.HOT, 16, FlashMode.QLC, ReliabilityStage.OLD, None),
    ],
)
def test_decision_table(kind, heat, retries, mode, stage, want):
    assert migration_decision(PolicyKind.parse(kind), heat, retries, mode, stage, TH) == want


@given(heats, st.integers(0, 40), modes, stages)
def test_baseline_never_migrates(heat, r, mode, stage):
    assert migration_decision(PolicyKind.BASELINE, heat, r, mode, stage, TH) is None


@given(heats, st.integers(0, 40), modes, stages)
def test_raro_subset_of_hotness(heat, r, mode, stage):
    raro = migration_decision(PolicyKind.RARO, heat, r, mode, stage, TH)
    if raro is not None:
        assert migration_decision(PolicyKind.HOTNESS, heat, r, mode, stage, TH) == raro


@given(heats, st.integers(0, 40), st.integers(0, 40), modes, stages)
def test_raro_monotone_in_retries(heat, r, extra, mode, stage):
    if migration_decision(PolicyKind.RARO, heat, r, mode, stage, TH) is not None:
        assert migration_decision(PolicyKind.RARO, heat, r + extra, mode, stage, TH) is not None


@given(heats, st.integers(0, 40), modes, stages, st.sampled_from(list(PolicyKind)))
def test_targets_are_denser_to_sparser(heat, r, mode, stage, kind):
    t = migration_decision(kind, heat, r, mode, stage, TH)
    if t is not None:
        assert t < mode


# --- read hook ------------------------------------------------------------------------

def test_cold_read_never_queues():
    p = make_policy(theta_hot=1e9, theta_warm=1e8)
    assert p.on_read_complete(0, 3, 16, FlashMode.QLC, 900) is None
    assert not p.pending


def test_hot_read_queues_and_dedups():
    p = make_policy(theta_hot=1.0, theta_warm=0.5)
    assert p.on_read_complete(0, 3, 2, FlashMode.QLC, 900) == (3, FlashMode.SLC)
    assert p.on_read_complete(1, 3, 2, FlashMode.QLC, 900) is None
    assert p.take_pending() == [(3, FlashMode.SLC)]
    assert not p.pending


def test_stage_from_block_mode():
    p = make_policy()
    assert p.stage_of(FlashMode.QLC, 834) is ReliabilityStage.OLD
    assert p.stage_of(FlashMode.TLC, 834) is ReliabilityStage.YOUNG


# --- reclaim ----------------------------------------------------------------------------

def _reclaim_setup():
    geo = Geometry(channels=1, luns_per_channel=1, planes_per_lun=1, blocks_per_plane=12)
    ftl = FTL(geo, logical_pages=1024)
    ftl.fill(range(1024))
    heat = HeatState(1024, 256, 1000, 10.0, 5.0)
    return ftl, heat


def test_reclaim_empty_above_watermark():
    ftl, heat = _reclaim_setup()
    assert reclaim_cold(ftl, heat, watermark_pages=0) == []


def test_reclaim_skips_blocks_with_hot_pages():
    ftl, heat = _reclaim_setup()
    b = ftl.translate(0)[0]
    ftl.convert_block(b, FlashMode.SLC)
    slc_blocks = [x.block_id for x in ftl.blocks if x.mode is FlashMode.SLC and x.n_valid]
    hot_block = ftl.translate(0)[0]
    for _ in range(20):
        heat.record_access(0)
    picked = [blk for blk, _ in reclaim_cold(ftl, heat, watermark_pages=ftl.initial_usable_pages)]
    assert hot_block not in picked
    assert set(picked) <= set(x.block_id for x in ftl.blocks if x.mode is not FlashMode.QLC)
    assert slc_blocks


def test_reclaim_covers_deficit_minimally():
    ftl, heat = _reclaim_setup()
    free = [b for b in ftl.blocks if b.wp == 0]
    a, b = free[0].block_id, free[1].block_id
    ftl.convert_block(a, FlashMode.SLC)
    ftl.convert_block(b, FlashMode.SLC)
    # deficit of exactly one block's worth of reclaimed capacity
    wm = ftl.free_pages + 768
    got = reclaim_cold(ftl, heat, watermark_pages=wm)
    assert len(got) == 1 and got[0][1] is FlashMode.QLC
