"""Microbenchmark of scan_parallel with a power-law fit over lengths."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ssm import scan_parallel

__all__ = ["BenchRow", "bench_scan", "fit_exponent", "write_bench_csv"]


@dataclass
class BenchRow:
    length: int
    workers: int
    median_ns: int
    p95_ns: int


def _make_elements(rng: np.random.Generator, length: int, channels: int,
                   state_dim: int) -> tuple[np.ndarray, np.ndarray]:
    # decay-like multipliers in (0, 1), bounded offsets
    a = rng.uniform(0.05, 0.95, (length, channels, state_dim))
    b = rng.uniform(-1.0, 1.0, (length, channels, state_dim))
    return a, b


def bench_scan(lengths: list[int], channels: int = 4, state_dim: int = 16,
               workers: int = 1, repeats: int = 9, seed: int = 0) -> list[BenchRow]:
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = []
    for length in lengths:
        a, b = _make_elements(rng, length, channels, state_dim)
        scan_parallel(a, b, workers=workers)          # warm caches
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            scan_parallel(a, b, workers=workers)
            samples.append(time.perf_counter_ns() - t0)
        samples.sort()
        median = samples[len(samples) // 2]
        p95 = samples[min(len(samples) - 1, int(np.ceil(0.95 * len(samples))) - 1)]
        rows.append(BenchRow(length=length, workers=workers,
                             median_ns=int(median), p95_ns=int(p95)))
    return rows


def fit_exponent(rows: list[BenchRow]) -> float:
    """Least-squares slope of log(median) against log(length)."""
    if len(rows) < 2:
        raise ValueError("need at least two lengths to fit an exponent")
    x = np.log([r.length for r in rows])
    y = np.log([r.median_ns for r in rows])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def write_bench_csv(path: str | Path, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["length", "workers", "median_ns", "p95_ns"])
        for r in rows:
            writer.writerow([r.length, r.workers, r.median_ns, r.p95_ns])
