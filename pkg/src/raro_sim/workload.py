"""Request streams: Zipf random reads, sequential reads, read/write mixes, traces."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

GIB = 1 << 30
WORKLOAD_KINDS = ("zipf", "sequential", "mixed", "trace")


class Request(NamedTuple):
    id: int
    op: str  # "R" or "W"
    lpn: int
    size: int = 1
    queue_id: int = 0
    issue_time: float = 0.0


class TraceError(ValueError):
    pass


@dataclass
class WorkloadSpec:
    kind: str = "zipf"
    zipf_theta: float = 1.2
    dataset_bytes: int = 8 * GIB
    request_pages: int = 1
    total_requests: int = 1_000_000
    queues: int = 4
    read_fraction: float = 1.0
    trace: str | None = None

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ValueError(f"workload.kind must be one of {WORKLOAD_KINDS}, got {self.kind!r}")
        if self.zipf_theta < 0:
            raise ValueError("workload.zipf_theta must be >= 0")
        if self.request_pages < 1:
            raise ValueError("workload.request_pages must be >= 1")
        if self.total_requests < 0:
            raise ValueError("workload.total_requests must be >= 0")
        if self.queues < 1:
            raise ValueError("workload.queues must be >= 1")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ValueError("workload.read_fraction must lie in [0, 1]")
        if self.kind == "trace" and not self.trace:
            raise ValueError("workload.trace is required for kind 'trace'")

    def dataset_pages(self, page_size_kib: int) -> int:
        return self.dataset_bytes // (page_size_kib * 1024)


def _rngs(seed: int):
    perm_ss, draw_ss, op_ss = np.random.SeedSequence([seed, 0x2171F]).spawn(3)
    return np.random.default_rng(perm_ss), np.random.default_rng(draw_ss), np.random.default_rng(op_ss)


def zipf_pmf(n: int, theta: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -theta
    return w / w.sum()


def zipf_lpns(n_pages: int, theta: float, count: int, seed: int) -> np.ndarray:
    """``count`` i.i.d. Zipf(theta) draws over ``n_pages``, rank order scattered by a seeded permutation."""
    perm_rng, draw_rng, _ = _rngs(seed)
    cdf = np.cumsum(zipf_pmf(n_pages, theta))
    cdf[-1] = 1.0
    ranks = np.searchsorted(cdf, draw_rng.random(count), side="right")
    np.minimum(ranks, n_pages - 1, out=ranks)
    rank_to_lpn = perm_rng.permutation(n_pages)
    return rank_to_lpn[ranks]


def _emit(ops, lpns, sizes, queues: int) -> Iterator[Request]:
    for i, (op, lpn, size) in enumerate(zip(ops, lpns, sizes)):
        yield Request(i, op, int(lpn), int(size), i % queues, 0.0)


def zipf_stream(spec: WorkloadSpec, page_size_kib: int = 16, seed: int = 0) -> Iterator[Request]:
    n_pages = spec.dataset_pages(page_size_kib)
    size = spec.request_pages
    starts = zipf_lpns(n_pages, spec.zipf_theta, spec.total_requests, seed)
    np.minimum(starts, n_pages - size, out=starts)
    return _emit(["R"] * spec.total_requests, starts.tolist(), [size] * spec.total_requests, spec.queues)


def sequential_stream(spec: WorkloadSpec, page_size_kib: int = 16, start: int = 0) -> Iterator[Request]:
    """Back-to-back reads of ``request_pages``; the last request of a pass is
    shortened so every pass covers the dataset exactly once."""
    n_pages = spec.dataset_pages(page_size_kib)
    lpn = start % n_pages
    for i in range(spec.total_requests):
        size = min(spec.request_pages, n_pages - lpn)
        yield Request(i, "R", lpn, size, i % spec.queues, 0.0)
        lpn += size
        if lpn >= n_pages:
            lpn = 0


def mixed_stream(spec: WorkloadSpec, page_size_kib: int = 16, seed: int = 0) -> Iterator[Request]:
    n_pages = spec.dataset_pages(page_size_kib)
    size = spec.request_pages
    starts = zipf_lpns(n_pages, spec.zipf_theta, spec.total_requests, seed)
    np.minimum(starts, n_pages - size, out=starts)
    _, _, op_rng = _rngs(seed)
    is_read = op_rng.random(spec.total_requests) < spec.read_fraction
    ops = np.where(is_read, "R", "W").tolist()
    return _emit(ops, starts.tolist(), [size] * spec.total_requests, spec.queues)


def parse_trace(path, logical_pages: int | None = None, queues: int = 1) -> list[Request]:
    """Read a ``<R|W> <lpn> <pages>`` trace; ``#`` starts a comment."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 3:
                raise TraceError(f"{path}:{lineno}: expected '<R|W> <lpn> <pages>', got {text!r}")
            op, lpn_s, size_s = parts
            op = op.upper()
            if op not in ("R", "W"):
                raise TraceError(f"{path}:{lineno}: unknown op {parts[0]!r}")
            try:
                lpn, size = int(lpn_s), int(size_s)
            except ValueError:
                raise TraceError(f"{path}:{lineno}: lpn and pages must be integers") from None
            if lpn < 0 or size < 1:
                raise TraceError(f"{path}:{lineno}: need lpn >= 0 and pages >= 1")
            if logical_pages is not None and lpn + size > logical_pages:
                raise TraceError(f"{path}:{lineno}: lpn range {lpn}+{size} exceeds {logical_pages} logical pages")
            n = len(out)
            out.append(Request(n, op, lpn, size, n % queues, 0.0))
    return out


def write_trace(path, requests) -> None:
    with open(path, "w") as fh:
        fh.write("# op lpn pages\n")
        for r in requests:
            fh.write(f"{r.op} {r.lpn} {r.size}\n")


def make_stream(spec: WorkloadSpec, page_size_kib: int, seed: int, logical_pages: int | None = None):
    if spec.kind == "zipf":
        return zipf_stream(spec, page_size_kib, seed)
    if spec.kind == "sequential":
        return sequential_stream(spec, page_size_kib)
    if spec.kind == "mixed":
        return mixed_stream(spec, page_size_kib, seed)
    reqs = parse_trace(Path(spec.trace), logical_pages, spec.queues)
    return iter(reqs[: spec.total_requests] if spec.total_requests else reqs)
