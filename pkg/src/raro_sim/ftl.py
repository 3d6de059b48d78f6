"""Page-mapped flash translation layer for a hybrid SLC/TLC/QLC device.

Only metadata is stored (mapping, validity, timestamps, write tokens), so a
16 GiB device fits in a few hundred MB.  Physical pages are addressed by
``ppn = block_id * stride + page_index`` where ``stride`` is the largest
block size of any mode.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

from .flash import FlashMode, FlashModel, RBER_MAX, page_variation_table, retry_count

US_PER_HOUR = 3600e6

# Only density-lowering conversions are driven by the read policy; the two
# QLC-bound paths exist for capacity reclaim.
CONVERSION_PATHS = frozenset(
    {
        (FlashMode.QLC, FlashMode.SLC),
        (FlashMode.QLC, FlashMode.TLC),
        (FlashMode.TLC, FlashMode.SLC),
        (FlashMode.SLC, FlashMode.QLC),
        (FlashMode.TLC, FlashMode.QLC),
    }
)


class OutOfSpaceError(RuntimeError):
    """No free page can be produced, even after garbage collection."""


@dataclass(frozen=True)
class Geometry:
    channels: int = 2
    luns_per_channel: int = 2
    planes_per_lun: int = 1
    blocks_per_plane: int = 256
    page_size_kib: int = 16

    def __post_init__(self):
        for name in ("channels", "luns_per_channel", "planes_per_lun", "blocks_per_plane", "page_size_kib"):
            if getattr(self, name) < 1:
                raise ValueError(f"geometry.{name} must be >= 1")

    @property
    def n_luns(self) -> int:
        return self.channels * self.luns_per_channel

    @property
    def n_blocks(self) -> int:
        return self.n_luns * self.planes_per_lun * self.blocks_per_plane

    @property
    def page_bytes(self) -> int:
        return self.page_size_kib * 1024

    def location(self, block_id: int) -> tuple[int, int, int]:
        """(channel, lun, plane) of a block; consecutive ids rotate over LUNs."""
        lun_global = block_id % self.n_luns
        plane = (block_id // self.n_luns) % self.planes_per_lun
        return lun_global % self.channels, lun_global // self.channels, plane


class Block:
    __slots__ = (
        "block_id", "lun", "mode", "ppb", "pe_cycles", "pe_baseline", "reads", "wp",
        "n_valid", "valid", "prog_time", "page_lpn", "token", "var",
        "wear", "ret_coef", "dist_coef", "raw_scale", "read_us", "q", "n",
    )

    def __init__(self, block_id: int, lun: int, mode: FlashMode, ppb: int, var: list):
        self.block_id = block_id
        self.lun = lun
        self.pe_cycles = 0
        self.pe_baseline = 0
        self.reads = 0
        self.var = var
        self._format(mode, ppb)

    def _format(self, mode: FlashMode, ppb: int):
        self.mode = mode
        self.ppb = ppb
        self.wp = 0
        self.n_valid = 0
        self.valid = bytearray(ppb)
        self.prog_time = [0.0] * ppb
        self.page_lpn = [-1] * ppb
        self.token = [-1] * ppb

    @property
    def invalid(self) -> int:
        return self.wp - self.n_valid

    @property
    def free(self) -> int:
        return self.ppb - self.wp

    def __repr__(self):
        return (
            f"Block({self.block_id}, {self.mode.name}, wp={self.wp}/{self.ppb}, "
            f"valid={self.n_valid}, pe={self.pe_cycles}, reads={self.reads})"
        )


class ProgramEvent(NamedTuple):
    block: int
    page: int
    latency: float
    token: int
    gc: "GcReport | None" = None


class ReadEvent(NamedTuple):
    block: int | None
    page: int | None
    retries: int
    latency: float
    token: int | None
    mode: FlashMode
    lun: int


@dataclass
class GcReport:
    moved_pages: int = 0
    erased_blocks: int = 0
    latency: float = 0.0
    lun_time: dict = field(default_factory=dict)


@dataclass
class ConversionReport:
    block: int
    source: FlashMode
    target: FlashMode
    relocated: int = 0
    capacity_delta_pages: int = 0
    retag_delta_pages: int = 0
    latency: float = 0.0
    skipped: bool = False
    lun_time: dict = field(default_factory=dict)


def _charge(lun_time: dict, lun: int, us: float):
    lun_time[lun] = lun_time.get(lun, 0.0) + us


class FTL:
    """Mapping table, block lifecycle, greedy GC, mode conversion, capacity ledger."""

    def __init__(
        self,
        geometry: Geometry = Geometry(),
        model: FlashModel | None = None,
        initial_mode: FlashMode = FlashMode.QLC,
        logical_pages: int | None = None,
        gc_low: float = 0.05,
        gc_high: float = 0.10,
        stripe_pages: int = 256,
    ):
        if stripe_pages < 1:
            raise ValueError("stripe_pages must be >= 1")
        self.geometry = geometry
        self.stripe_pages = stripe_pages
        self.model = model if model is not None else FlashModel()
        self.initial_mode = FlashMode(initial_mode)
        self.gc_low = gc_low
        self.gc_high = gc_high
        specs = self.model.modes
        self.stride = max(s.pages_per_block for s in specs.values())
        self.page_bytes = geometry.page_bytes

        n_blocks = geometry.n_blocks
        ppb0 = specs[self.initial_mode].pages_per_block
        if logical_pages is None:
            logical_pages = n_blocks * ppb0
        if logical_pages < 1:
            raise ValueError("logical space must hold at least one page")
        self.logical_pages = logical_pages

        var = page_variation_table(n_blocks, self.stride, self.model.variation)
        self.blocks: list[Block] = []
        for b in range(n_blocks):
            lun = b % geometry.n_luns
            blk = Block(b, lun, self.initial_mode, ppb0, var[b].tolist())
            self._refresh_model_cache(blk)
            self.blocks.append(blk)
        del var

        self.l2p: list[int] = [-1] * logical_pages
        self.free_pool: list[deque] = [deque() for _ in range(geometry.n_luns)]
        for blk in self.blocks:
            self.free_pool[blk.lun].append(blk)
        self.active: dict[FlashMode, list] = {m: [None] * geometry.n_luns for m in FlashMode}
        self._nalloc = 0
        self._seq = 0

        self.usable_pages = n_blocks * ppb0
        self.initial_usable_pages = self.usable_pages
        self.free_pages = self.usable_pages
        self.mode_blocks = {m: 0 for m in FlashMode}
        self.mode_blocks[self.initial_mode] = n_blocks
        self.capacity_series: list[tuple[float, int]] = [(0.0, self.usable_bytes())]
        self.retags: dict[tuple[FlashMode, FlashMode], int] = {}
        self.host_writes = 0
        self.gc_moves = 0
        self.migration_moves = 0

    # ------------------------------------------------------------------ model
    def _refresh_model_cache(self, blk: Block):
        """Cache the cycle-dependent parts of the RBER sum for ``blk``."""
        p = self.model.rber[blk.mode]
        c = float(blk.pe_cycles)
        cpow = (lambda e: c**e) if c > 0 else (lambda e: 0.0)
        blk.wear = p.epsilon + p.alpha_wear * cpow(p.k)
        blk.ret_coef = p.beta * cpow(p.m)
        blk.dist_coef = p.gamma * cpow(p.p)
        blk.q = p.q
        blk.n = p.n
        blk.raw_scale = self.model.raw_bits_scale(blk.mode)
        blk.read_us = self.model.modes[blk.mode].read_latency_us

    def set_pe_cycles(self, block_id: int, cycles: int, baseline: bool = True):
        blk = self.blocks[block_id]
        blk.pe_cycles = cycles
        if baseline:
            blk.pe_baseline = cycles
        self._refresh_model_cache(blk)

    def page_rber(self, blk: Block, page: int, now: float) -> float:
        r = blk.wear
        if blk.dist_coef and blk.reads:
            r += blk.dist_coef * blk.reads**blk.q
        if blk.ret_coef:
            hours = (now - blk.prog_time[page]) * self.model.retention_scale / US_PER_HOUR
            if hours > 0:
                r += blk.ret_coef * hours**blk.n
        if r >= RBER_MAX:
            return RBER_MAX
        return r if r > 0 else 0.0

    # -------------------------------------------------------------- capacity
    def usable_bytes(self) -> int:
        return self.usable_pages * self.page_bytes

    usable_capacity = usable_bytes

    def _retag(self, blk: Block, target: FlashMode) -> int:
        """Re-format an erased block in ``target`` mode; returns the page delta."""
        assert blk.wp == 0
        old_ppb = blk.ppb
        new_ppb = self.model.modes[target].pages_per_block
        self.retags[(blk.mode, target)] = self.retags.get((blk.mode, target), 0) + 1
        self.mode_blocks[blk.mode] -= 1
        self.mode_blocks[target] += 1
        blk._format(target, new_ppb)
        self._refresh_model_cache(blk)
        delta = new_ppb - old_ppb
        self.usable_pages += delta
        self.free_pages += delta
        return delta

    def _record_capacity(self, now: float):
        usable = self.usable_bytes()
        if self.capacity_series[-1][1] != usable:
            self.capacity_series.append((float(now), usable))

    # ------------------------------------------------------------ allocation
    def _take_free_block(self, lun: int, mode: FlashMode) -> Block | None:
        pool = self.free_pool[lun]
        if not pool:
            return None
        want = self.model.modes[mode].pages_per_block
        best = None
        for blk in pool:
            if blk.mode == mode:
                best = blk
                break
            if best is None or abs(blk.ppb - want) < abs(best.ppb - want):
                best = blk
        pool.remove(best)
        if best.mode != mode:
            self._retag(best, mode)
        return best

    def _alloc(self, mode: FlashMode) -> tuple[Block, int]:
        """Next free page of ``mode``; the LUN advances every ``stripe_pages`` allocations."""
        n_luns = self.geometry.n_luns
        actives = self.active[mode]
        start = (self._nalloc // self.stripe_pages) % n_luns
        self._nalloc += 1
        for i in range(n_luns):
            lun = (start + i) % n_luns
            blk = actives[lun]
            if blk is None or blk.wp >= blk.ppb:
                blk = self._take_free_block(lun, mode)
                actives[lun] = blk
                if blk is None:
                    continue
            page = blk.wp
            blk.wp += 1
            self.free_pages -= 1
            return blk, page
        raise OutOfSpaceError(f"no free {mode.name} page")

    def _program(self, lpn: int, mode: FlashMode, now: float, token: int) -> tuple[Block, int]:
        blk, page = self._alloc(mode)
        old = self.l2p[lpn]
        if old >= 0:
            self._invalidate(old)
        blk.valid[page] = 1
        blk.n_valid += 1
        blk.prog_time[page] = now
        blk.page_lpn[page] = lpn
        blk.token[page] = token
        self.l2p[lpn] = blk.block_id * self.stride + page
        return blk, page

    def _invalidate(self, ppn: int):
        b, page = divmod(ppn, self.stride)
        blk = self.blocks[b]
        blk.valid[page] = 0
        blk.n_valid -= 1
        blk.page_lpn[page] = -1

    def _erase(self, blk: Block):
        self.free_pages += blk.wp
        blk.wp = 0
        blk.n_valid = 0
        blk.valid = bytearray(blk.ppb)
        blk.page_lpn = [-1] * blk.ppb
        blk.token = [-1] * blk.ppb
        blk.prog_time = [0.0] * blk.ppb
        blk.pe_cycles += 1
        blk.reads = 0
        self._refresh_model_cache(blk)

    def _detach_active(self, blk: Block):
        actives = self.active[blk.mode]
        if actives[blk.lun] is blk:
            actives[blk.lun] = None

    def _is_active(self, blk: Block) -> bool:
        return self.active[blk.mode][blk.lun] is blk

    def _in_free_pool(self, blk: Block) -> bool:
        return blk.wp == 0 and not self._is_active(blk)

    # --------------------------------------------------------------- host I/O
    def translate(self, lpn: int) -> tuple[int, int] | None:
        if not 0 <= lpn < self.logical_pages:
            raise IndexError(f"lpn {lpn} outside logical space of {self.logical_pages} pages")
        ppn = self.l2p[lpn]
        if ppn < 0:
            return None
        return divmod(ppn, self.stride)

    def host_write(self, lpn: int, now: float = 0.0, mode: FlashMode | None = None) -> ProgramEvent:
        if not 0 <= lpn < self.logical_pages:
            raise IndexError(f"lpn {lpn} outside logical space of {self.logical_pages} pages")
        mode = self.initial_mode if mode is None else mode
        gc = None
        if self.free_pages <= self.gc_low * self.usable_pages:
            gc = self.garbage_collect(now)
        token = self._seq
        try:
            blk, page = self._program(lpn, mode, now, token)
        except OutOfSpaceError:
            # last resort: reclaim whatever is reclaimable, then retry once
            more = self.garbage_collect(now, low=1.0, high=1.0, max_victims=1)
            if not more.erased_blocks:
                raise
            gc = more if gc is None else _merge_gc(gc, more)
            blk, page = self._program(lpn, mode, now, token)
        self._seq += 1
        self.host_writes += 1
        latency = self.model.modes[blk.mode].write_latency_us
        return ProgramEvent(blk.block_id, page, latency, token, gc)

    def host_read(self, lpn: int, now: float = 0.0) -> ReadEvent:
        ppn = self.l2p[lpn]
        if ppn < 0:
            spec = self.model.modes[self.initial_mode]
            return ReadEvent(None, None, 0, spec.read_latency_us, None, self.initial_mode, lpn % self.geometry.n_luns)
        b, page = divmod(ppn, self.stride)
        blk = self.blocks[b]
        blk.reads += 1
        raw = blk.raw_scale * self.page_rber(blk, page, now) * blk.var[page]
        retries = retry_count(self.model.retry, raw) if raw > self.model.retry.e_ldpc else 0
        return ReadEvent(b, page, retries, (1 + retries) * blk.read_us, blk.token[page], blk.mode, blk.lun)

    def fill(self, lpns, now: float = 0.0):
        """Write ``lpns`` in order without timing; used to precondition a device."""
        mode = self.initial_mode
        for lpn in lpns:
            self._program(int(lpn), mode, now, self._seq)
            self._seq += 1
            self.host_writes += 1

    # --------------------------------------------------------------------- GC
    def select_gc_victim(self, candidates=None) -> int | None:
        """Fully programmed block with the most invalid pages (ties: fewer P/E, lower id)."""
        best = None
        best_key = None
        for blk in self.blocks if candidates is None else candidates:
            if isinstance(blk, int):
                blk = self.blocks[blk]
            if blk.wp < blk.ppb or self._is_active(blk):
                continue
            inv = blk.wp - blk.n_valid
            if inv <= 0:
                continue
            key = (-inv, blk.pe_cycles, blk.block_id)
            if best_key is None or key < best_key:
                best, best_key = blk, key
        return None if best is None else best.block_id

    def garbage_collect(
        self, now: float = 0.0, low: float | None = None, high: float | None = None, max_victims: int | None = None
    ) -> GcReport:
        low = self.gc_low if low is None else low
        high = self.gc_high if high is None else high
        report = GcReport()
        if self.free_pages >= low * self.usable_pages:
            return report
        specs = self.model.modes
        while self.free_pages < high * self.usable_pages:
            if max_victims is not None and report.erased_blocks >= max_victims:
                break
            victim_id = self.select_gc_victim()
            if victim_id is None:
                break
            victim = self.blocks[victim_id]
            vspec = specs[victim.mode]
            if victim.n_valid > self._writable_pages(victim.mode, exclude=victim):
                break
            moved = self._relocate(victim, victim.mode, now, report.lun_time)
            self._erase(victim)
            self.free_pool[victim.lun].append(victim)
            _charge(report.lun_time, victim.lun, vspec.erase_latency_us)
            report.moved_pages += moved
            report.erased_blocks += 1
            report.latency += moved * (vspec.read_latency_us + vspec.write_latency_us) + vspec.erase_latency_us
        self.gc_moves += report.moved_pages
        self._record_capacity(now)
        return report

    def _writable_pages(self, mode: FlashMode, exclude: Block | None = None) -> int:
        """Pages of ``mode`` obtainable from open blocks plus the free pool."""
        ppb = self.model.modes[mode].pages_per_block
        total = 0
        for blk in self.active[mode]:
            if blk is not None and blk is not exclude:
                total += blk.ppb - blk.wp
        for pool in self.free_pool:
            total += ppb * sum(1 for b in pool if b is not exclude)
        return total

    def _relocate(self, src: Block, mode: FlashMode, now: float, lun_time: dict) -> int:
        """Move every valid page of ``src`` to open blocks of ``mode``."""
        self._detach_active(src)
        read_us = self.model.modes[src.mode].read_latency_us
        write_us = self.model.modes[mode].write_latency_us
        stride = self.stride
        moved = 0
        for page in range(src.wp):
            if not src.valid[page]:
                continue
            lpn = src.page_lpn[page]
            token = src.token[page]
            ptime = src.prog_time[page]
            blk, dpage = self._alloc(mode)
            src.valid[page] = 0
            src.n_valid -= 1
            src.page_lpn[page] = -1
            blk.valid[dpage] = 1
            blk.n_valid += 1
            blk.prog_time[dpage] = now if now > ptime else ptime
            blk.page_lpn[dpage] = lpn
            blk.token[dpage] = token
            self.l2p[lpn] = blk.block_id * stride + dpage
            _charge(lun_time, src.lun, read_us)
            _charge(lun_time, blk.lun, write_us)
            moved += 1
        return moved

    # ------------------------------------------------------- mode conversion
    def can_convert(self, block_id: int, target: FlashMode) -> bool:
        blk = self.blocks[block_id]
        return blk.mode != target and (blk.mode, target) in CONVERSION_PATHS

    def convert_block(self, block_id: int, target: FlashMode, now: float = 0.0) -> ConversionReport:
        """Relocate ``block_id``'s valid data into ``target`` mode, erase it, re-tag it.

        If the move would push free space under the GC low watermark the
        conversion is skipped and the device is left untouched.
        """
        target = FlashMode(target)
        blk = self.blocks[block_id]
        source = blk.mode
        if source == target:
            raise ValueError(f"block {block_id} is already {target.name}")
        if (source, target) not in CONVERSION_PATHS:
            raise ValueError(f"no conversion path {source.name}->{target.name}")
        specs = self.model.modes
        report = ConversionReport(block_id, source, target)
        usable_before = self.usable_pages

        if self._in_free_pool(blk):
            self.free_pool[blk.lun].remove(blk)
            report.capacity_delta_pages = self._retag(blk, target)
            self.retags[(source, target)] -= 1
            self.free_pool[blk.lun].append(blk)
            self._record_capacity(now)
            return report

        if not self._conversion_fits(blk, target):
            report.skipped = True
            return report

        self._detach_active(blk)
        lun_time = report.lun_time
        moved = self._relocate(blk, target, now, lun_time)
        self._erase(blk)
        report.capacity_delta_pages = self.model.modes[target].pages_per_block - blk.ppb
        self._retag(blk, target)
        self.retags[(source, target)] -= 1
        self.free_pool[blk.lun].append(blk)
        _charge(lun_time, blk.lun, specs[source].erase_latency_us)

        report.relocated = moved
        report.retag_delta_pages = self.usable_pages - usable_before - report.capacity_delta_pages
        report.latency = (
            moved * (specs[source].read_latency_us + specs[target].write_latency_us) + specs[source].erase_latency_us
        )
        self.migration_moves += moved
        self._record_capacity(now)
        return report

    def _conversion_fits(self, blk: Block, target: FlashMode) -> bool:
        ppb_t = self.model.modes[target].pages_per_block
        need = blk.n_valid
        open_space = 0
        for a in self.active[target]:
            if a is not None and a is not blk:
                open_space += a.ppb - a.wp
        free_blocks = [b for pool in self.free_pool for b in pool if b is not blk]
        extra = max(0, need - open_space)
        n_new = -(-extra // ppb_t)
        if n_new > len(free_blocks):
            return False
        # pessimistic: new target blocks are carved out of the largest free blocks
        sizes = sorted((b.ppb for b in free_blocks), reverse=True)
        retag_loss = sum(max(0, s - ppb_t) for s in sizes[:n_new])
        free_after = self.free_pages - (blk.ppb - blk.wp) + ppb_t - need - retag_loss
        usable_after = self.usable_pages + (ppb_t - blk.ppb) - retag_loss
        return free_after >= self.gc_low * usable_after

    # ------------------------------------------------------------ inspection
    def mapped_pages(self) -> int:
        return sum(1 for x in self.l2p if x >= 0)

    def recompute_ledger(self) -> tuple[int, int, dict]:
        """(usable_pages, free_pages, blocks per mode) from a full scan."""
        usable = 0
        free = 0
        counts = {m: 0 for m in FlashMode}
        for blk in self.blocks:
            usable += self.model.modes[blk.mode].pages_per_block
            free += blk.ppb - blk.wp
            counts[blk.mode] += 1
        return usable, free, counts

    def check_invariants(self):
        """Full consistency scan; raises AssertionError on the first violation."""
        stride = self.stride
        specs = self.model.modes
        seen = set()
        for lpn, ppn in enumerate(self.l2p):
            if ppn < 0:
                continue
            assert ppn not in seen, f"two lpns map to ppn {ppn}"
            seen.add(ppn)
            b, page = divmod(ppn, stride)
            blk = self.blocks[b]
            assert page < blk.wp, f"lpn {lpn} maps past write pointer of block {b}"
            assert blk.valid[page], f"lpn {lpn} maps to invalid page {b}:{page}"
            assert blk.page_lpn[page] == lpn, f"reverse map mismatch at {b}:{page}"
        n_valid_total = 0
        for blk in self.blocks:
            spec = specs[blk.mode]
            assert blk.ppb == spec.pages_per_block, f"block {blk.block_id} size disagrees with its mode"
            assert len(blk.valid) == blk.ppb and len(blk.page_lpn) == blk.ppb
            assert 0 <= blk.wp <= blk.ppb
            assert blk.pe_cycles <= spec.pe_limit, f"block {blk.block_id} beyond P/E limit"
            nv = sum(blk.valid)
            assert nv == blk.n_valid, f"block {blk.block_id} valid count drift"
            assert not any(blk.valid[blk.wp:]), f"valid page past write pointer in block {blk.block_id}"
            for page in range(blk.wp):
                if blk.valid[page]:
                    lpn = blk.page_lpn[page]
                    assert self.l2p[lpn] == blk.block_id * stride + page, f"stale reverse entry {blk.block_id}:{page}"
            n_valid_total += nv
        assert n_valid_total == len(seen)
        usable, free, counts = self.recompute_ledger()
        assert usable == self.usable_pages, f"ledger usable {self.usable_pages} != scan {usable}"
        assert free == self.free_pages, f"ledger free {self.free_pages} != scan {free}"
        assert counts == self.mode_blocks
        pooled = [b for pool in self.free_pool for b in pool]
        assert len(pooled) == len({id(b) for b in pooled})
        for b in pooled:
            assert b.wp == 0 and not self._is_active(b)


def _merge_gc(a: GcReport, b: GcReport) -> GcReport:
    lun_time = dict(a.lun_time)
    for lun, t in b.lun_time.items():
        _charge(lun_time, lun, t)
    return GcReport(a.moved_pages + b.moved_pages, a.erased_blocks + b.erased_blocks, a.latency + b.latency, lun_time)

