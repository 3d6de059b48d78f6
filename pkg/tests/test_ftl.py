import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import interleave
from raro_sim.engine import precondition
from raro_sim.flash import FlashMode, FlashModel, ReliabilityStage
from raro_sim.ftl import FTL, Geometry, OutOfSpaceError

GIB = 1 << 30
MIB = 1 << 20
TINY = Geometry(channels=1, luns_per_channel=1, planes_per_lun=1, blocks_per_plane=4)


def test_fresh_capacity():
    assert FTL(Geometry(), logical_pages=1).usable_bytes() == 16 * GIB
    assert FTL(Geometry(), initial_mode=FlashMode.SLC, logical_pages=1).usable_bytes() == 4 * GIB


def test_geometry_rejects_empty():
    with pytest.raises(ValueError):
        Geometry(blocks_per_plane=0)


def test_location_round_trip():
    geo = Geometry()
    seen = {geo.location(b) for b in range(geo.n_blocks)}
    assert len({loc[:2] for loc in seen}) == geo.n_luns


def test_read_your_write(small_ftl):
    ev = small_ftl.host_write(5)
    assert small_ftl.translate(5) == (ev.block, ev.page)
    assert small_ftl.host_read(5).token == ev.token


def test_unmapped(small_ftl):
    assert small_ftl.translate(9) is None
    ev = small_ftl.host_read(9)
    assert ev.block is None and ev.retries == 0
    assert ev.latency == small_ftl.model.modes[FlashMode.QLC].read_latency_us
    with pytest.raises(IndexError):
        small_ftl.translate(small_ftl.logical_pages)


def test_out_of_place_update(small_ftl):
    first = small_ftl.host_write(5)
    second = small_ftl.host_write(5)
    assert small_ftl.translate(5) == (second.block, second.page)
    assert not small_ftl.blocks[first.block].valid[first.page]


def test_write_latency_qlc(small_ftl):
    assert small_ftl.host_write(0).latency == 3102


def test_write_opens_new_block_when_full():
    ftl = FTL(TINY, logical_pages=2048)
    blocks = {ftl.host_write(lpn).block for lpn in range(1025)}
    assert len(blocks) == 2


def test_out_of_space_when_all_valid():
    ftl = FTL(TINY, logical_pages=4 * 1024)
    ftl.fill(range(4 * 1024))
    with pytest.raises(OutOfSpaceError):
        ftl.host_write(0)
    ftl.check_invariants()


def test_fresh_slc_read():
    ftl = FTL(TINY, initial_mode=FlashMode.SLC, logical_pages=16)
    ftl.host_write(3)
    ev = ftl.host_read(3)
    assert ev.retries == 0 and ev.latency == 20


def test_old_qlc_reads_in_band():
    ftl = FTL(TINY, logical_pages=2048)
    precondition(ftl, stage=ReliabilityStage.OLD)
    retries = [ftl.host_read(lpn).retries for lpn in range(2048)]
    inside = sum(11 <= r <= 16 for r in retries)
    assert inside / len(retries) >= 0.95


def test_repeated_read_disturb_monotone():
    ftl = FTL(TINY, logical_pages=16)
    precondition(ftl, stage=ReliabilityStage.MIDDLE)
    b = ftl.host_read(4)
    reads = ftl.blocks[b.block].reads
    again = ftl.host_read(4)
    assert ftl.blocks[b.block].reads == reads + 1
    assert again.retries >= b.retries


# --- GC -----------------------------------------------------------------------

def _mark(ftl, block, invalid, pe=0):
    blk = ftl.blocks[block]
    blk.wp = blk.ppb
    blk.n_valid = blk.ppb - invalid
    blk.pe_cycles = pe


def test_victim_most_invalid():
    ftl = FTL(TINY, logical_pages=16)
    _mark(ftl, 0, 10)
    _mark(ftl, 1, 300)
    _mark(ftl, 2, 0)
    assert ftl.select_gc_victim([0, 1, 2]) == 1


def test_victim_tie_break():
    ftl = FTL(TINY, logical_pages=16)
    _mark(ftl, 0, 50, pe=3)
    _mark(ftl, 1, 50, pe=1)
    assert ftl.select_gc_victim([0, 1]) == 1
    _mark(ftl, 2, 50, pe=1)
    assert ftl.select_gc_victim([2, 1]) == 1


def test_victim_none_when_all_valid():
    ftl = FTL(TINY, logical_pages=16)
    for b in range(4):
        _mark(ftl, b, 0)
    assert ftl.select_gc_victim() is None


def _block_with_valid(n_valid):
    ftl = FTL(TINY, logical_pages=2048)
    ftl.fill(range(1024))
    ftl.fill(range(1024 - n_valid))  # overwrite, leaving n_valid pages of block 0 valid
    assert ftl.blocks[0].n_valid == n_valid
    return ftl


def test_gc_empty_victim():
    ftl = _block_with_valid(0)
    rep = ftl.garbage_collect(low=1.0, high=1.0, max_victims=1)
    assert (rep.moved_pages, rep.erased_blocks) == (0, 1)
    assert rep.latency == 10_000
    assert ftl.blocks[0].pe_cycles == 1


def test_gc_charges_reads_writes_erase():
    ftl = _block_with_valid(100)
    rep = ftl.garbage_collect(low=1.0, high=1.0, max_victims=1)
    assert rep.moved_pages == 100 and rep.erased_blocks == 1
    assert rep.latency == pytest.approx(100 * 140 + 100 * 3102 + 10_000)
    ftl.check_invariants()


def test_gc_noop_above_watermark(small_ftl):
    small_ftl.host_write(0)
    rep = small_ftl.garbage_collect()
    assert rep.erased_blocks == 0 and rep.moved_pages == 0


@given(st.lists(st.integers(0, 2047), min_size=1, max_size=3000))
def test_gc_progress(lpns):
    ftl = FTL(TINY, logical_pages=2048)
    ftl.fill(lpns)
    has_invalid = any(b.wp == b.ppb and b.wp > b.n_valid for b in ftl.blocks if not ftl._is_active(b))
    before = ftl.free_pages
    rep = ftl.garbage_collect(low=1.0, high=1.0, max_victims=1)
    if has_invalid:
        assert ftl.free_pages > before and rep.erased_blocks == 1
    ftl.check_invariants()


# --- conversion -----------------------------------------------------------------

def test_convert_qlc_to_slc_capacity(small_ftl):
    ftl = small_ftl
    ftl.fill(range(100))
    b = ftl.translate(0)[0]
    before = ftl.usable_bytes()
    rep = ftl.convert_block(b, FlashMode.SLC)
    assert rep.capacity_delta_pages == -768
    assert rep.capacity_delta_pages * ftl.page_bytes == -12 * MIB
    assert rep.relocated == 100
    assert ftl.blocks[b].mode is FlashMode.SLC
    assert ftl.usable_bytes() == before - 12 * MIB + rep.retag_delta_pages * ftl.page_bytes
    for lpn in range(100):
        assert ftl.blocks[ftl.translate(lpn)[0]].mode is FlashMode.SLC
    ftl.check_invariants()


def test_convert_free_block_round_trip():
    ftl = FTL(Geometry(), logical_pages=16)
    assert ftl.convert_block(7, FlashMode.SLC).capacity_delta_pages == -768
    assert ftl.usable_bytes() == 16 * GIB - 12 * MIB
    assert ftl.convert_block(7, FlashMode.QLC).capacity_delta_pages == 768
    assert ftl.usable_bytes() == 16 * GIB
    assert ftl.convert_block(8, FlashMode.TLC).capacity_delta_pages * ftl.page_bytes == -4 * MIB


def test_convert_same_mode_rejected(small_ftl):
    with pytest.raises(ValueError):
        small_ftl.convert_block(0, FlashMode.QLC)


def test_convert_invalid_path_rejected(small_ftl):
    small_ftl.convert_block(0, FlashMode.SLC)
    with pytest.raises(ValueError):
        small_ftl.convert_block(0, FlashMode.TLC)


def test_convert_skipped_when_no_room():
    ftl = FTL(TINY, logical_pages=3 * 1024)
    ftl.fill(range(3 * 1024))
    state = (ftl.usable_pages, ftl.free_pages, list(ftl.l2p))
    rep = ftl.convert_block(ftl.translate(0)[0], FlashMode.SLC)
    assert rep.skipped
    assert state == (ftl.usable_pages, ftl.free_pages, list(ftl.l2p))


def test_pe_cycles_survive_conversion(small_ftl):
    ftl = small_ftl
    ftl.set_pe_cycles(0, 500)
    ftl.fill(range(2048))
    b = ftl.translate(0)[0]
    pe = ftl.blocks[b].pe_cycles
    ftl.convert_block(b, FlashMode.TLC)
    assert ftl.blocks[b].pe_cycles == pe + 1


def test_capacity_series_records_steps(small_ftl):
    small_ftl.convert_block(3, FlashMode.SLC, now=5.0)
    assert small_ftl.capacity_series[-1] == (5.0, small_ftl.usable_bytes())
    assert small_ftl.capacity_series[0][1] - small_ftl.capacity_series[-1][1] == 12 * MIB


def test_stripe_unit_places_extent_in_one_block():
    ftl = FTL(Geometry(channels=1, luns_per_channel=4, blocks_per_plane=2), logical_pages=1024, stripe_pages=256)
    ftl.fill(range(1024))
    for ext in range(4):
        assert len({ftl.translate(lpn)[0] for lpn in range(ext * 256, ext * 256 + 256)}) == 1
    per_page = FTL(Geometry(channels=1, luns_per_channel=4, blocks_per_plane=2), logical_pages=1024, stripe_pages=1)
    per_page.fill(range(8))
    assert len({per_page.blocks[per_page.translate(lpn)[0]].lun for lpn in range(4)}) == 4


@pytest.mark.parametrize("seed", range(3))
def test_random_interleaving_short(seed):
    counts = interleave(seed, n_ops=20_000, check_every=2_000)
    assert counts["writes"] and counts["reads"] and counts["conversions"]


def test_model_cache_follows_mode_change():
    ftl = FTL(TINY, FlashModel(), logical_pages=16)
    precondition(ftl, stage=ReliabilityStage.OLD)
    qlc = ftl.host_read(0).retries
    ftl.convert_block(ftl.translate(0)[0], FlashMode.SLC)
    ev = ftl.host_read(0)
    assert ev.mode is FlashMode.SLC and ev.retries < qlc
