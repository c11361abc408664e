"""Shared domain types and the geospatial/signal math every layer relies on."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_KM = 6371.0

NodeId = str


def _finite(name: str, value) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return v


@dataclass(frozen=True)
class GeoLocation:
    """WGS-84 coordinate pair in decimal degrees."""

    latitude_deg: float
    longitude_deg: float

    def __post_init__(self):
        lat = _finite("latitude_deg", self.latitude_deg)
        lon = _finite("longitude_deg", self.longitude_deg)
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude_deg {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude_deg {lon} outside [-180, 180]")
        object.__setattr__(self, "latitude_deg", lat)
        object.__setattr__(self, "longitude_deg", lon)


@dataclass(frozen=True)
class AccelSample:
    """One 3-axis acceleration reading, in g, on the simulated clock."""

    timestamp_ms: int
    x: float
    y: float
    z: float

    def __post_init__(self):
        object.__setattr__(self, "timestamp_ms", int(self.timestamp_ms))
        object.__setattr__(self, "x", _finite("x", self.x))
        object.__setattr__(self, "y", _finite("y", self.y))
        object.__setattr__(self, "z", _finite("z", self.z))


@dataclass(frozen=True)
class SignalWindow:
    """A contiguous, timestamp-ordered run of samples from a single probe."""

    samples: tuple[AccelSample, ...]
    probe_id: NodeId
    window_start_ms: int
    window_end_ms: int

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise ValueError("SignalWindow requires at least one sample")
        if not self.probe_id:
            raise ValueError("SignalWindow requires a probe_id")
        if self.window_end_ms <= self.window_start_ms:
            raise ValueError("window_end_ms must be greater than window_start_ms")
        prev = None
        for s in self.samples:
            if prev is not None and s.timestamp_ms < prev:
                raise ValueError("samples must be sorted by timestamp")
            if not self.window_start_ms <= s.timestamp_ms < self.window_end_ms:
                raise ValueError(
                    f"sample at {s.timestamp_ms} ms outside window "
                    f"[{self.window_start_ms}, {self.window_end_ms})"
                )
            prev = s.timestamp_ms

    @property
    def duration_ms(self) -> int:
        return self.window_end_ms - self.window_start_ms


def vector_magnitude(sample: AccelSample) -> float:
    """Euclidean magnitude of the acceleration vector, in g."""
    return math.sqrt(sample.x * sample.x + sample.y * sample.y + sample.z * sample.z)


def haversine_distance(a: GeoLocation, b: GeoLocation) -> float:
    """Great-circle distance in kilometers on a 6371.0 km sphere."""
    lat1 = math.radians(a.latitude_deg)
    lat2 = math.radians(b.latitude_deg)
    dlat = math.radians(b.latitude_deg - a.latitude_deg)
    dlon = math.radians(b.longitude_deg - a.longitude_deg)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))
