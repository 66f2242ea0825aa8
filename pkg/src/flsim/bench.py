"""Aggregator scaling micro-benchmarks on synthetic random gradients."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .aggregation import Aggregator, GradientLog
from .errors import ConfigError
from .nn import Layout, LayeredVector

BENCH_KINDS = ("mean", "median", "krum", "legato")


@dataclass(frozen=True)
class BenchRow:
    aggregator: str
    n: int
    median_time_ns: int
    peak_log_values: int


def bench_layout(d: int) -> Layout:
    """Two groups (weights-like and biases-like) totalling ``d`` coordinates."""
    if d < 2:
        raise ConfigError("benchmark dimension must be at least 2")
    biases = max(1, d // 20)
    return Layout(("dense1.weights", "dense1.biases"), ((d - biases,), (biases,)))


def _random_round(layout: Layout, n: int, rng: np.random.Generator) -> list[LayeredVector]:
    return [LayeredVector(layout, rng.normal(size=layout.dim)) for _ in range(n)]


def _time_one(kind, layout, n, m, repetitions, rng):
    f = max(0, (n - 3) // 2) if kind == "krum" else 0
    agg = Aggregator(kind, byzantine_bound=f, log_size=m)
    rounds = [_random_round(layout, n, rng) for _ in range(m)]
    if agg.log is not None:
        # pre-fill so every timed call runs on a full log
        for t, grads in enumerate(rounds[:-1], start=1):
            agg.log.push(grads, t)
    round_id = m
    agg(rounds[-1], round_id)  # warm-up
    times = []
    for r in range(repetitions):
        grads = rounds[r % m]
        round_id += 1
        start = time.perf_counter_ns()
        agg(grads, round_id)
        times.append(time.perf_counter_ns() - start)
    peak = agg.log.stored_values if agg.log is not None else 0
    return int(np.median(times)), peak


def bench_aggregators(
    n_values, d: int = 1000, m: int = 10, repetitions: int = 15, kinds=BENCH_KINDS, seed: int = 0
) -> list[BenchRow]:
    """Median aggregation time per (aggregator, n) with a full LEGATO log of ``m`` rounds."""
    n_values = [int(n) for n in n_values]
    if not n_values:
        raise ConfigError("bench needs at least one n value")
    if n_values != sorted(n_values):
        raise ConfigError("bench n values must be ascending")
    if repetitions < 1:
        raise ConfigError("bench repetitions must be at least 1")
    layout = bench_layout(d)
    rng = np.random.default_rng(seed)
    rows = []
    for kind in kinds:
        for n in n_values:
            if kind == "krum" and n < 4:
                raise ConfigError(f"krum needs n >= 4, got {n}")
            t, peak = _time_one(kind, layout, n, m, repetitions, rng)
            rows.append(BenchRow(kind, n, t, peak))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["aggregator", "n", "median_time_ns", "peak_log_values"])
    for r in rows:
        writer.writerow([r.aggregator, r.n, r.median_time_ns, r.peak_log_values])
    return buf.getvalue()


def time_ratio(rows: list[BenchRow], kind: str, n_low: int, n_high: int) -> float:
    by_n = {r.n: r.median_time_ns for r in rows if r.aggregator == kind}
    return by_n[n_high] / max(by_n[n_low], 1)
