"""Detector micro-benchmark: scoring latency over pre-generated windows.

Absolute numbers are hardware-bound; the contract here is the methodology:
per-repetition wall times, their mean, population standard deviation and
nearest-rank 90th percentile, with the raw dump kept so the table can be
recomputed exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from quakemesh.core import AccelSample, SignalWindow
from quakemesh.detection import DetectorParams, sta_lta_detect, zscore_detect
from quakemesh.sim.signals import rng_for


@dataclass
class BenchResult:
    algorithm: str
    repetitions: int
    timings_ms: list[float]

    @property
    def mean_ms(self) -> float:
        return sum(self.timings_ms) / len(self.timings_ms)

    @property
    def std_ms(self) -> float:
        mean = self.mean_ms
        return math.sqrt(sum((t - mean) ** 2 for t in self.timings_ms) / len(self.timings_ms))

    @property
    def p90_ms(self) -> float:
        ordered = sorted(self.timings_ms)
        rank = max(1, math.ceil(0.9 * len(ordered)))
        return ordered[rank - 1]


def _make_windows(params: DetectorParams, count: int, seed: int, noise_g: float = 1e-3):
    rng = rng_for(seed, "bench")
    n = params.window_samples
    period = round(params.period_ms)
    windows = []
    for w in range(count):
        start = w * params.window_ms
        noise = rng.standard_normal(n) * noise_g
        samples = tuple(
            AccelSample(start + i * period, 0.0, 0.0, float(1.0 + noise[i])) for i in range(n)
        )
        windows.append(SignalWindow(samples, "bench", start, start + params.window_ms))
    return windows


def run_bench(params: DetectorParams, repetitions: int = 300, seed: int = 0) -> BenchResult:
    """Time one detector evaluation per pre-generated window."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    windows = _make_windows(params, repetitions, seed)
    timings_ms: list[float] = []
    if params.algorithm == "zscore":
        for window in windows:
            t0 = time.perf_counter_ns()
            zscore_detect(window, 1.0, 1e-3, params.threshold_z)
            timings_ms.append((time.perf_counter_ns() - t0) / 1e6)
    else:
        for window in windows:
            t0 = time.perf_counter_ns()
            sta_lta_detect(window, params.sta_seconds, params.lta_seconds, params.threshold_ratio)
            timings_ms.append((time.perf_counter_ns() - t0) / 1e6)
    return BenchResult(params.algorithm, repetitions, timings_ms)
