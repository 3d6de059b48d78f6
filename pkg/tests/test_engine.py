import numpy as np
import pytest

from raro_sim.engine import HIST_BINS, Simulator, precondition
from raro_sim.flash import FlashMode, ReliabilityStage, reliability_stage
from raro_sim.ftl import FTL, Geometry
from raro_sim.policy import HeatState, Policy, PolicyKind, PolicyThresholds
from raro_sim.workload import Request, WorkloadSpec, sequential_stream, zipf_stream

MIB = 1 << 20
LIMITS = {FlashMode.SLC: 100_000, FlashMode.TLC: 3000, FlashMode.QLC: 1000}


def policy_for(ftl, kind="baseline", hot=1e9, warm=1e8):
    heat = HeatState(ftl.logical_pages, 256, 100_000, hot, warm)
    return Policy(PolicyKind.parse(kind), PolicyThresholds(), heat, LIMITS)


def slc_device(luns, pages=1000, stripe=256):
    geo = Geometry(channels=1, luns_per_channel=luns, planes_per_lun=1, blocks_per_plane=4)
    ftl = FTL(geo, initial_mode=FlashMode.SLC, logical_pages=pages, stripe_pages=stripe)
    precondition(ftl, stage=None)
    return ftl


def test_serial_slc_reads():
    ftl = slc_device(1)
    sim = Simulator(ftl, policy_for(ftl))
    spec = WorkloadSpec(kind="sequential", dataset_bytes=1000 * 16 * 1024, total_requests=1000, queues=1)
    sim.submit(sequential_stream(spec))
    snap = sim.run_to_completion()
    assert snap.elapsed_us == pytest.approx(20_000)
    assert snap.iops == pytest.approx(50_000)
    assert snap.mean_retries == 0


def test_four_luns_scale():
    ftl = slc_device(4, stripe=1)
    sim = Simulator(ftl, policy_for(ftl))
    spec = WorkloadSpec(kind="sequential", dataset_bytes=1000 * 16 * 1024, total_requests=1000, queues=4)
    sim.submit(sequential_stream(spec))
    snap = sim.run_to_completion()
    assert snap.iops == pytest.approx(4 * 50_000, rel=0.01)


def test_empty_stream_zero_snapshot(small_ftl):
    sim = Simulator(small_ftl, policy_for(small_ftl))
    snap = sim.run_to_completion()
    assert (snap.submitted, snap.completed, snap.reads, snap.iops, snap.elapsed_us) == (0, 0, 0, 0.0, 0.0)
    assert sum(snap.retry_hist) == 0 and snap.capacity_loss_bytes == 0


def test_precondition_8gib():
    ftl = FTL(Geometry(), logical_pages=524_288)
    precondition(ftl, stage=ReliabilityStage.OLD)
    assert ftl.mapped_pages() == 524_288
    assert all(reliability_stage(b.pe_cycles, b.mode) is ReliabilityStage.OLD for b in ftl.blocks)
    assert {b.pe_cycles for b in ftl.blocks} == {834}
    assert all(b.reads == 0 for b in ftl.blocks)


def test_precondition_zero_fill(small_ftl):
    precondition(small_ftl, fill_pages=0)
    assert small_ftl.mapped_pages() == 0


def _zipf_sim(kind="raro", n=3000, queues=4, seed=0):
    geo = Geometry(channels=1, luns_per_channel=2, planes_per_lun=1, blocks_per_plane=16)
    ftl = FTL(geo, logical_pages=8 * 1024)
    precondition(ftl, stage=ReliabilityStage.OLD)
    sim = Simulator(ftl, policy_for(ftl, kind, hot=6.0, warm=3.0))
    spec = WorkloadSpec(dataset_bytes=8 * 1024 * 16 * 1024, total_requests=n, queues=queues)
    sim.submit(zipf_stream(spec, 16, seed))
    return sim


def test_histogram_and_conservation():
    sim = _zipf_sim(n=2000)
    sim.run(500)
    s = sim.snapshot_stats()
    assert s.completed + s.failed + s.in_flight == s.submitted == 2000
    assert sum(s.retry_hist) == s.page_reads == s.reads == 500
    assert len(s.retry_hist) == HIST_BINS
    assert sim.snapshot_stats() == s
    sim.run()
    s = sim.snapshot_stats()
    assert s.in_flight == 0 and sum(s.retry_hist) == 2000


def test_latency_decomposition_and_causality():
    sim = _zipf_sim(n=2000)
    lun_trace = []
    run = sim.ftl.host_read

    def spy(lpn, now):
        ev = run(lpn, now)
        spec = sim.ftl.model.modes[ev.mode]
        assert ev.latency == (1 + ev.retries) * spec.read_latency_us
        lun_trace.append(list(sim.lun_free))
        return ev

    sim.ftl.host_read = spy
    sim.run()
    lat = np.frombuffer(sim._lat, dtype=np.float64)
    assert (lat >= 20.0).all()
    arr = np.array(lun_trace)
    assert (np.diff(arr, axis=0) >= 0).all()


def test_conversions_show_in_stats():
    sim = _zipf_sim("hotness", n=3000)
    s = sim.run_to_completion()
    assert s.migration_count > 0
    assert s.capacity_loss_bytes == s.initial_capacity_bytes - s.final_capacity_bytes > 0
    assert s.capacity_series[0][1] == s.initial_capacity_bytes
    assert s.capacity_series[-1][1] == s.final_capacity_bytes
    assert s.mean_retries < 14


def test_baseline_never_converts():
    s = _zipf_sim("baseline").run_to_completion()
    assert s.migration_count == 0 and s.capacity_loss_bytes == 0 and len(s.capacity_series) == 1


def test_deterministic():
    a = _zipf_sim("raro", seed=4).run_to_completion()
    b = _zipf_sim("raro", seed=4).run_to_completion()
    assert a == b


def test_single_conversion_step():
    geo = Geometry(channels=1, luns_per_channel=1, planes_per_lun=1, blocks_per_plane=12)
    ftl = FTL(geo, logical_pages=1024)
    precondition(ftl, stage=ReliabilityStage.OLD)
    # theta_hot=1 makes the very first read Hot; its block goes to SLC
    sim = Simulator(ftl, policy_for(ftl, "raro", hot=1.0, warm=0.5))
    sim.submit([Request(0, "R", 0, 1, 0, 0.0)])
    s = sim.run_to_completion()
    assert s.migrations == {"QLC->SLC": 1}
    steps = [a[1] - b[1] for a, b in zip(s.capacity_series, s.capacity_series[1:])]
    # relocating a full block also retags the free blocks that receive it
    n_slc = sum(b.mode is FlashMode.SLC for b in ftl.blocks)
    assert n_slc >= 1 and all(x > 0 and x % (12 * MIB) == 0 for x in steps)
    assert sum(steps) == n_slc * 12 * MIB == s.capacity_loss_bytes


def test_out_of_space_is_a_failed_request():
    geo = Geometry(channels=1, luns_per_channel=1, planes_per_lun=1, blocks_per_plane=2)
    ftl = FTL(geo, logical_pages=2048)
    precondition(ftl, stage=None)
    sim = Simulator(ftl, policy_for(ftl))
    sim.submit([Request(0, "W", 5, 1, 0, 0.0), Request(1, "R", 5, 1, 0, 0.0)])
    s = sim.run_to_completion()
    assert s.failed == 1 and s.completed == 1 and s.in_flight == 0


def test_windowed_snapshot():
    sim = _zipf_sim(n=2000, queues=1)
    s = sim.run_to_completion()
    mid = s.elapsed_us / 2
    a = sim.snapshot_stats((0.0, mid))
    b = sim.snapshot_stats((mid, s.elapsed_us + 1))
    assert a.reads + b.reads == s.reads
    assert sum(a.retry_hist) + sum(b.retry_hist) == sum(s.retry_hist)
