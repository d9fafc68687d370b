"""Timing harness for tree construction, path generation and verification.

Stages timed per (file size, segment size):

* ``read_ms``: read the file and hash every padded segment into the leaf level
* ``root_ms``: fold the leaf level up to the root
* ``path_ms``: regenerate the levels from the leaves and extract one sibling path
* ``verify_ms``: verify a single-segment proof against the digest

Each figure is the median over ``reps`` repetitions.  Sub-millisecond stages
are looped until one sample spans at least ``MIN_SAMPLE_S`` and divided back.
"""

from __future__ import annotations

import csv
import io
import re
import statistics
import tempfile
import time
from collections.abc import Callable, Iterable
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from . import merkle

CSV_HEADER = ("segment_size", "segments", "height", "read_ms", "root_ms", "path_ms", "verify_ms")
MIN_SAMPLE_S = 0.005

KB = 1024
MB = 1024 * KB
DEFAULT_SEGMENT_SIZES = tuple(128 << i for i in range(11))  # 128 B .. 128 KB
DEFAULT_FILE_SIZES = (10 * MB, 50 * MB, 100 * MB)


@dataclass(frozen=True)
class BenchRow:
    segment_size: int
    segments: int
    height: int
    read_ms: float
    root_ms: float
    path_ms: float
    verify_ms: float


def parse_size(text: str) -> int:
    """``"128"``, ``"128B"``, ``"4KB"``, ``"10MB"``, ``"1GB"`` (binary multiples)."""
    match = re.fullmatch(r"\s*(\d+)\s*([KMG]?)i?B?\s*", text, re.IGNORECASE)
    if not match:
        raise ValueError(f"bad size {text!r}")
    scale = {"": 1, "K": KB, "M": MB, "G": 1024 * MB}[match.group(2).upper()]
    size = int(match.group(1)) * scale
    if size <= 0:
        raise ValueError("sizes must be positive")
    return size


def expected_shape(file_size: int, segment_size: int) -> tuple[int, int]:
    """(raw segment count, tree height) implied by the padding rule."""
    raw = -(-file_size // segment_size)
    return raw, merkle.padded_count(raw).bit_length() - 1


def write_random_file(path: Path, size: int, seed: int) -> Path:
    rng = np.random.Generator(np.random.Philox(key=seed))
    with open(path, "wb") as fh:
        remaining = size
        while remaining:
            chunk = min(remaining, 8 * MB)
            fh.write(rng.bytes(chunk))
            remaining -= chunk
    return path


def _sample_ms(fn: Callable[[], object]) -> float:
    loops = 1
    while True:
        start = time.perf_counter()
        for _ in range(loops):
            fn()
        elapsed = time.perf_counter() - start
        if elapsed >= MIN_SAMPLE_S or loops >= 1 << 16:
            return elapsed * 1000.0 / loops
        loops *= 2 if elapsed == 0 else max(2, int(MIN_SAMPLE_S / elapsed) + 1)


def _median_ms(fn: Callable[[], object], reps: int) -> float:
    return statistics.median(_sample_ms(fn) for _ in range(reps))


def bench_file(path: Path, segment_size: int, reps: int = 5, seed: int = 0) -> BenchRow:
    size = path.stat().st_size

    def read_and_hash() -> bytes:
        return merkle.hash_leaves(path.read_bytes(), segment_size)[0]

    read_ms = _median_ms(read_and_hash, reps)
    leaves = read_and_hash()
    raw, height = expected_shape(size, segment_size)
    m = len(leaves) // merkle.HASH_SIZE

    root_ms = _median_ms(lambda: merkle.build_levels(leaves), reps)

    index = 1 + seed % raw
    c = merkle.leaf_node(index, m)
    path_ms = _median_ms(lambda: merkle.path_from_leaves(leaves, c), reps)

    levels = merkle.build_levels(leaves)
    digest = merkle.Digest(levels[0], height)
    segment = merkle.segment_bytes(path.read_bytes(), segment_size, index - 1)
    proof = merkle.StorageProof(c, merkle.path_from_leaves(leaves, c), (merkle.Segment(index, segment),))
    if not merkle.verify(digest, c, proof):
        raise RuntimeError("benchmark proof failed to verify")
    verify_ms = _median_ms(lambda: merkle.verify(digest, c, proof), reps)

    return BenchRow(segment_size, raw, height, read_ms, root_ms, path_ms, verify_ms)


def bench(
    file_sizes: Iterable[int],
    segment_sizes: Iterable[int],
    reps: int = 5,
    seed: int = 0,
    workdir: Path | None = None,
    progress: Callable[[int, BenchRow], None] | None = None,
) -> dict[int, list[BenchRow]]:
    """Run the full cross product; returns rows keyed by file size."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    file_sizes = list(file_sizes)
    segment_sizes = list(segment_sizes)
    if any(s <= 0 for s in file_sizes + segment_sizes):
        raise ValueError("sizes must be positive")
    results: dict[int, list[BenchRow]] = {}
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for size in file_sizes:
            path = write_random_file(Path(tmp) / f"bench_{size}.bin", size, seed)
            rows = []
            for sz in segment_sizes:
                row = bench_file(path, sz, reps, seed)
                rows.append(row)
                if progress:
                    progress(size, row)
            results[size] = rows
            path.unlink()
    return results


def to_csv(rows: Iterable[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        values = astuple(row)
        writer.writerow(values[:3] + tuple(f"{v:.6f}" for v in values[3:]))
    return buf.getvalue()


def from_csv(text: str) -> list[BenchRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    types = [f.type for f in fields(BenchRow)]
    return [BenchRow(*(int(v) if t in ("int", int) else float(v) for v, t in zip(rec, types))) for rec in reader]
