"""Randomized FTL operation driver shared by the invariant tests."""
import random

from raro_sim.flash import FlashMode
from raro_sim.ftl import CONVERSION_PATHS, FTL, Geometry, OutOfSpaceError

MIB = 1 << 20


def interleave(seed: int, n_ops: int = 100_000, check_every: int = 10_000,
               geometry: Geometry | None = None, logical_pages: int = 6 * 1024) -> dict:
    """Random writes/reads/GC/conversions; asserts every invariant along the way.

    Returns operation counters so callers can confirm each kind actually ran.
    """
    rng = random.Random(seed)
    geo = geometry or Geometry(channels=1, luns_per_channel=2, planes_per_lun=1, blocks_per_plane=8)
    ftl = FTL(geo, logical_pages=logical_pages)
    page_bytes = ftl.page_bytes
    expect = {}
    counts = dict(writes=0, reads=0, gc=0, conversions=0, skipped=0, out_of_space=0)
    paths = sorted(CONVERSION_PATHS, key=lambda p: (p[0], p[1]))
    for i in range(1, n_ops + 1):
        u = rng.random()
        t = float(i)
        if u < 0.55:
            lpn = rng.randrange(logical_pages)
            try:
                ev = ftl.host_write(lpn, t)
            except OutOfSpaceError:
                counts["out_of_space"] += 1
            else:
                expect[lpn] = ev.token
                counts["writes"] += 1
        elif u < 0.995:
            lpn = rng.randrange(logical_pages)
            ev = ftl.host_read(lpn, t)
            assert ev.token == expect.get(lpn), f"seed {seed} op {i}: lpn {lpn} lost its data"
            counts["reads"] += 1
        elif u < 0.997:
            ftl.garbage_collect(t, low=1.0, high=ftl.gc_high, max_victims=1)
            counts["gc"] += 1
        else:
            blk = ftl.blocks[rng.randrange(len(ftl.blocks))]
            targets = [dst for src, dst in paths if src == blk.mode]
            if not targets:
                continue
            target = rng.choice(targets)
            before = ftl.usable_pages
            rep = ftl.convert_block(blk.block_id, target, t)
            if rep.skipped:
                assert ftl.usable_pages == before
                counts["skipped"] += 1
            else:
                step = ftl.model.modes[target].pages_per_block - ftl.model.modes[rep.source].pages_per_block
                assert rep.capacity_delta_pages == step
                assert ftl.usable_pages - before == rep.capacity_delta_pages + rep.retag_delta_pages
                if (rep.source, target) == (FlashMode.QLC, FlashMode.SLC):
                    assert step * page_bytes == -12 * MIB
                if (rep.source, target) == (FlashMode.QLC, FlashMode.TLC):
                    assert step * page_bytes == -4 * MIB
                counts["conversions"] += 1
            assert (ftl.usable_pages, ftl.free_pages, ftl.mode_blocks) == ftl.recompute_ledger()
        if i % check_every == 0:
            ftl.check_invariants()
    ftl.check_invariants()
    for lpn, tok in expect.items():
        assert ftl.host_read(lpn).token == tok
    # block uniformity: page count of every block equals its mode's
    for blk in ftl.blocks:
        assert blk.ppb == ftl.model.modes[blk.mode].pages_per_block
    return counts
