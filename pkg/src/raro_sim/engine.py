"""Deterministic discrete-event engine: closed-loop queues over per-LUN timelines."""
from __future__ import annotations

import heapq
from array import array
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .flash import FlashMode, ReliabilityStage, stage_midpoint
from .ftl import FTL, OutOfSpaceError
from .policy import Policy, reclaim_cold

HIST_BINS = 32


@dataclass
class StatsSnapshot:
    submitted: int = 0
    completed: int = 0
    failed: int = 0
    in_flight: int = 0
    reads: int = 0
    writes: int = 0
    page_reads: int = 0
    elapsed_us: float = 0.0
    iops: float = 0.0
    bandwidth_mib_s: float = 0.0
    latency_mean_us: float = 0.0
    latency_p50_us: float = 0.0
    latency_p99_us: float = 0.0
    latency_p999_us: float = 0.0
    mean_retries: float = 0.0
    retry_hist: list = field(default_factory=lambda: [0] * HIST_BINS)
    migrations: dict = field(default_factory=dict)
    migration_count: int = 0
    skipped_migrations: int = 0
    migrated_pages: int = 0
    gc_moved_pages: int = 0
    gc_erases: int = 0
    host_page_writes: int = 0
    write_amplification: float = 0.0
    initial_capacity_bytes: int = 0
    final_capacity_bytes: int = 0
    capacity_loss_bytes: int = 0
    capacity_series: list = field(default_factory=list)
    blocks_by_mode: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _pct(values: np.ndarray, q: float) -> float:
    return float(np.percentile(values, q)) if len(values) else 0.0


class Simulator:
    """Runs request streams against an FTL + policy pair.

    Each queue issues its next request once the previous one completed, so
    ``queues`` plays the role of FIO's thread count.  Every physical operation
    occupies its LUN for its latency; migration and GC work share the same
    timelines as host I/O.
    """

    def __init__(self, ftl: FTL, policy: Policy, reclaim_interval: int = 0, reclaim_watermark: float = 0.10):
        self.ftl = ftl
        self.policy = policy
        self.reclaim_interval = reclaim_interval
        self.reclaim_watermark = reclaim_watermark
        n_luns = ftl.geometry.n_luns
        self.lun_free = [0.0] * n_luns
        self._queues: dict[int, deque] = {}
        self._heap: list = []
        self._queue_clock: dict[int, float] = {}

        self.submitted = 0
        self.completed = 0
        self.failed = 0
        self.reads = 0
        self.writes = 0
        self.page_reads = 0
        self.retry_total = 0
        self.hist = [0] * HIST_BINS
        self.migrations: dict[str, int] = {}
        self.skipped = 0
        self.gc_erases = 0
        self.gc_moved = 0
        # per completed read request: completion time, latency, pages, retries
        self._done = array("d")
        self._lat = array("d")
        self._pages = array("l")
        self._rtot = array("l")
        self.last_completion = 0.0

    # --------------------------------------------------------------- intake
    def submit(self, requests) -> int:
        n = 0
        for req in requests:
            q = self._queues.get(req.queue_id)
            if q is None:
                q = self._queues[req.queue_id] = deque()
                self._queue_clock[req.queue_id] = 0.0
            if not q:
                heapq.heappush(self._heap, (max(self._queue_clock[req.queue_id], req.issue_time), req.queue_id))
            q.append(req)
            n += 1
        self.submitted += n
        return n

    # ------------------------------------------------------------- main loop
    def run_to_completion(self) -> StatsSnapshot:
        self.run()
        return self.snapshot_stats()

    def run(self, max_requests: int | None = None) -> int:
        """Process up to ``max_requests`` requests in timestamp order."""
        heap = self._heap
        queues = self._queues
        qclock = self._queue_clock
        ftl = self.ftl
        host_read = ftl.host_read
        blocks = ftl.blocks
        policy = self.policy
        on_read = policy.on_read_complete
        pending = policy.pending
        lun_free = self.lun_free
        hist = self.hist
        top_bin = HIST_BINS - 1
        done_a, lat_a, pages_a, rtot_a = self._done, self._lat, self._pages, self._rtot
        processed = 0
        reclaim_every = self.reclaim_interval

        while heap and (max_requests is None or processed < max_requests):
            t, qid = heapq.heappop(heap)
            q = queues[qid]
            req = q.popleft()
            issue = t if t > req.issue_time else req.issue_time
            finish = issue
            if req.op == "R":
                rsum = 0
                for lpn in range(req.lpn, req.lpn + req.size):
                    ev = host_read(lpn, issue)
                    lun = ev.lun
                    free = lun_free[lun]
                    end = (issue if issue > free else free) + ev.latency
                    lun_free[lun] = end
                    if end > finish:
                        finish = end
                    r = ev.retries
                    rsum += r
                    hist[r if r < top_bin else top_bin] += 1
                    b = ev.block
                    if b is None:
                        on_read(lpn, None, 0, ev.mode, 0)
                    else:
                        on_read(lpn, b, r, ev.mode, blocks[b].pe_cycles)
                self.page_reads += req.size
                self.retry_total += rsum
                self.reads += 1
                self.completed += 1
                done_a.append(finish)
                lat_a.append(finish - issue)
                pages_a.append(req.size)
                rtot_a.append(rsum)
            else:
                try:
                    for lpn in range(req.lpn, req.lpn + req.size):
                        ev = ftl.host_write(lpn, issue)
                        if ev.gc is not None and ev.gc.erased_blocks:
                            self.gc_erases += ev.gc.erased_blocks
                            self.gc_moved += ev.gc.moved_pages
                            self._charge(ev.gc.lun_time, issue)
                        lun = blocks[ev.block].lun
                        free = lun_free[lun]
                        end = (issue if issue > free else free) + ev.latency
                        lun_free[lun] = end
                        if end > finish:
                            finish = end
                    self.writes += 1
                    self.completed += 1
                except OutOfSpaceError:
                    self.failed += 1
            if pending:
                self._run_conversions(finish)
            processed += 1
            if reclaim_every and (self.completed + self.failed) % reclaim_every == 0:
                self._reclaim(finish)
            if finish > self.last_completion:
                self.last_completion = finish
            qclock[qid] = finish
            if q:
                nxt = q[0].issue_time
                heapq.heappush(heap, (finish if finish > nxt else nxt, qid))
        return processed

    def _charge(self, lun_time: dict, start: float):
        lun_free = self.lun_free
        for lun, us in sorted(lun_time.items()):
            base = lun_free[lun]
            lun_free[lun] = (start if start > base else base) + us

    def _run_conversions(self, now: float):
        ftl = self.ftl
        for block, target in self.policy.take_pending():
            if not ftl.can_convert(block, target):
                continue
            rep = ftl.convert_block(block, target, now)
            if rep.skipped:
                self.skipped += 1
                continue
            key = f"{rep.source.name}->{rep.target.name}"
            self.migrations[key] = self.migrations.get(key, 0) + 1
            self._charge(rep.lun_time, now)

    def _reclaim(self, now: float):
        ftl = self.ftl
        wm = self.reclaim_watermark * ftl.initial_usable_pages
        for block, target in reclaim_cold(ftl, self.policy.heat, wm):
            if ftl.can_convert(block, target):
                self.policy.pending.setdefault(block, target)
        if self.policy.pending:
            self._run_conversions(now)

    # ----------------------------------------------------------------- stats
    def snapshot_stats(self, window: tuple[float, float] | None = None) -> StatsSnapshot:
        """Cumulative statistics, or only reads completing inside ``window`` (µs)."""
        ftl = self.ftl
        done = np.frombuffer(self._done, dtype=np.float64) if len(self._done) else np.zeros(0)
        lat = np.frombuffer(self._lat, dtype=np.float64) if len(self._lat) else np.zeros(0)
        pages = np.frombuffer(self._pages, dtype=np.int_) if len(self._pages) else np.zeros(0, dtype=np.int_)
        rtot = np.frombuffer(self._rtot, dtype=np.int_) if len(self._rtot) else np.zeros(0, dtype=np.int_)
        if window is None:
            t0, t1 = 0.0, self.last_completion
            sel = slice(None)
        else:
            t0, t1 = window
            sel = (done >= t0) & (done < t1)
        lat_w = lat[sel]
        n_reads = int(len(lat_w))
        n_pages = int(pages[sel].sum()) if n_reads else 0
        elapsed = max(0.0, t1 - t0)
        secs = elapsed / 1e6
        page_bytes = ftl.page_bytes
        snap = StatsSnapshot(
            submitted=self.submitted,
            completed=self.completed,
            failed=self.failed,
            in_flight=self.submitted - self.completed - self.failed,
            reads=n_reads,
            writes=self.writes,
            page_reads=n_pages,
            elapsed_us=elapsed,
            iops=n_reads / secs if secs > 0 else 0.0,
            bandwidth_mib_s=n_pages * page_bytes / (1 << 20) / secs if secs > 0 else 0.0,
            latency_mean_us=float(lat_w.mean()) if n_reads else 0.0,
            latency_p50_us=_pct(lat_w, 50),
            latency_p99_us=_pct(lat_w, 99),
            latency_p999_us=_pct(lat_w, 99.9),
            mean_retries=float(rtot[sel].sum()) / n_pages if n_pages else 0.0,
            migrations=dict(sorted(self.migrations.items())),
            migration_count=sum(self.migrations.values()),
            skipped_migrations=self.skipped,
            migrated_pages=ftl.migration_moves,
            gc_moved_pages=ftl.gc_moves,
            gc_erases=self.gc_erases,
            host_page_writes=ftl.host_writes,
            write_amplification=(
                (ftl.host_writes + ftl.gc_moves + ftl.migration_moves) / ftl.host_writes if ftl.host_writes else 0.0
            ),
            initial_capacity_bytes=ftl.initial_usable_pages * page_bytes,
            final_capacity_bytes=ftl.usable_bytes(),
            capacity_loss_bytes=ftl.initial_usable_pages * page_bytes - ftl.usable_bytes(),
            capacity_series=[list(x) for x in ftl.capacity_series],
            blocks_by_mode={m.name: ftl.mode_blocks[m] for m in FlashMode},
        )
        if window is None:
            snap.retry_hist = list(self.hist)
        else:
            snap.retry_hist = self._windowed_hist(sel)
        return snap

    def _windowed_hist(self, sel) -> list:
        # per-page retries are not kept individually; rebuild from single-page requests
        pages = np.frombuffer(self._pages, dtype=np.int_)[sel]
        rtot = np.frombuffer(self._rtot, dtype=np.int_)[sel]
        if len(pages) and (pages != 1).any():
            raise ValueError("windowed retry histogram needs single-page read requests")
        return np.bincount(np.minimum(rtot, HIST_BINS - 1), minlength=HIST_BINS).tolist()


def precondition(
    ftl: FTL,
    fill_pages: int | None = None,
    stage: ReliabilityStage | None = ReliabilityStage.YOUNG,
    seed: int = 0,
    shuffle: bool = False,
) -> FTL:
    """Age every block to the middle of ``stage`` and write ``fill_pages`` LPNs.

    LPNs are written in ascending order unless ``shuffle`` is set, in which
    case ``seed`` picks the order.
    """
    if fill_pages is None:
        fill_pages = ftl.logical_pages
    if not 0 <= fill_pages <= ftl.logical_pages:
        raise ValueError("fill_pages outside the logical space")
    if stage is not None:
        stage = ReliabilityStage(stage)
        specs = ftl.model.modes
        for blk in ftl.blocks:
            ftl.set_pe_cycles(blk.block_id, stage_midpoint(stage, specs[blk.mode].pe_limit))
    order = np.arange(fill_pages)
    if shuffle:
        np.random.default_rng(seed).shuffle(order)
    ftl.fill(order.tolist())
    for blk in ftl.blocks:
        blk.reads = 0
    return ftl
