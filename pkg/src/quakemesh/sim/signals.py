"""Synthetic probe streams and quake injection.

A probe's stream is Gaussian noise around a 1 g resting magnitude; a quake
adds a half-sine burst on the vertical axis starting at a wave-travel
delay derived from the probe's distance to the epicenter.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from quakemesh.core import AccelSample, GeoLocation, haversine_distance


def rng_for(seed: int, *labels) -> np.random.Generator:
    """Independent, process-stable RNG stream for one simulator concern.

    Labels are folded in via crc32 so streams never depend on Python's
    per-process string hashing.
    """
    entropy = [seed & 0xFFFFFFFF]
    for label in labels:
        entropy.append(zlib.crc32(str(label).encode("utf-8")))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class Burst:
    onset_ms: int
    duration_ms: int
    peak_g: float

    def amplitude_at(self, t_ms: int) -> float:
        if t_ms < self.onset_ms or t_ms >= self.onset_ms + self.duration_ms:
            return 0.0
        return self.peak_g * math.sin(math.pi * (t_ms - self.onset_ms) / self.duration_ms)


@dataclass(frozen=True)
class QuakeSource:
    """One synthetic event: epicenter, onset wavefront, burst shape."""

    epicenter: GeoLocation
    origin_time_ms: int
    burst_amplitude_g: float
    wave_speed_km_s: float = 6.0
    burst_duration_s: float = 5.0
    noise_floor_g: float = 1e-3

    def __post_init__(self):
        if self.burst_amplitude_g <= 0:
            raise ValueError("burst_amplitude_g must be positive")
        if self.wave_speed_km_s <= 0 or self.burst_duration_s <= 0 or self.noise_floor_g <= 0:
            raise ValueError("wave speed, burst duration and noise floor must be positive")

    def onset_for(self, location: GeoLocation) -> int:
        """Burst onset at a probe: origin time plus wave-travel delay."""
        delay_ms = haversine_distance(self.epicenter, location) / self.wave_speed_km_s * 1000.0
        return self.origin_time_ms + round(delay_ms)


class GaussianStreamSource:
    """Sample generator on a fixed period grid, driven by one seeded RNG."""

    def __init__(
        self,
        rng: np.random.Generator,
        noise_floor_g: float = 1e-3,
        start_ms: int = 0,
        period_ms: int = 10,
    ):
        if period_ms <= 0:
            raise ValueError("period_ms must be positive")
        self._rng = rng
        self.noise_floor_g = noise_floor_g
        self.period_ms = period_ms
        self._start_ms = start_ms
        self._next_ms = start_ms
        self.bursts: list[Burst] = []

    def add_burst(self, burst: Burst) -> None:
        self.bursts.append(burst)

    def discard_until(self, now_ms: int) -> None:
        """Skip ahead without drawing: unsent backlog is dropped, not replayed."""
        if now_ms < self._next_ms:
            return
        steps = (now_ms - self._start_ms) // self.period_ms + 1
        self._next_ms = self._start_ms + steps * self.period_ms

    def samples_until(self, now_ms: int) -> list[AccelSample]:
        out = []
        while self._next_ms <= now_ms:
            t = self._next_ms
            nx, ny, nz = self._rng.standard_normal(3) * self.noise_floor_g
            shake = sum(b.amplitude_at(t) for b in self.bursts)
            out.append(AccelSample(t, float(nx), float(ny), float(1.0 + nz + shake)))
            self._next_ms += self.period_ms
        return out


def inject_quake(sources: dict, quake: QuakeSource, probe_locations: dict) -> dict[str, int]:
    """Schedule the quake's burst into every probe stream; returns per-probe onsets."""
    duration_ms = round(quake.burst_duration_s * 1000)
    onsets: dict[str, int] = {}
    for probe_id, source in sources.items():
        onset = quake.onset_for(probe_locations[probe_id])
        source.add_burst(Burst(onset, duration_ms, quake.burst_amplitude_g))
        onsets[probe_id] = onset
    return onsets
