"""Edge detection pipeline: per-probe buffers, sliding windows, detectors, quorum.

Each probe feeding a detector gets its own ring buffer and its own detector
instance. At every tick a window is extracted per probe, scored, and the
per-probe results are combined by the quorum policy.
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from quakemesh.core import AccelSample, NodeId, SignalWindow, vector_magnitude

log = logging.getLogger(__name__)

GRAVITY_G = 1.0

# Below this many g of spread the statistics are meaningless; skip and re-seed.
DEGENERATE_STD_G = 1e-9

ALGORITHMS = ("zscore", "sta_lta")
QUORUM_MODES = ("any", "majority", "all")


class DegenerateBaseline(Exception):
    """Raised when the baseline spread is too small to score a window."""


@dataclass
class PushResult:
    accepted: int
    rejected: int


class RingBuffer:
    """Fixed-capacity, timestamp-ordered sample store for one probe.

    Out-of-order samples are dropped, never reordered: the stream contract
    is monotonic timestamps, and a late sample would invalidate windows
    already extracted.
    """

    def __init__(self, probe_id: NodeId, capacity_samples: int = 400):
        if capacity_samples <= 0:
            raise ValueError("capacity_samples must be positive")
        self.probe_id = probe_id
        self.capacity_samples = capacity_samples
        self._samples: deque[AccelSample] = deque(maxlen=capacity_samples)
        self.rejected_total = 0

    def __len__(self) -> int:
        return len(self._samples)

    @property
    def newest_timestamp_ms(self) -> int | None:
        return self._samples[-1].timestamp_ms if self._samples else None

    def push(self, batch) -> PushResult:
        """Append in-order samples; drop and count anything older than the head."""
        accepted = 0
        rejected = 0
        for sample in batch:
            newest = self.newest_timestamp_ms
            if newest is not None and sample.timestamp_ms < newest:
                rejected += 1
                continue
            self._samples.append(sample)
            accepted += 1
        self.rejected_total += rejected
        return PushResult(accepted, rejected)

    def extract_window(self, params: "DetectorParams", now_ms: int) -> SignalWindow | None:
        """Most recent full window ending at or before now_ms, or None while warming up.

        None is also returned when the trailing samples contain a gap so wide
        that they no longer fit inside one window span.
        """
        n = params.window_samples
        if len(self._samples) < n:
            return None
        samples = list(self._samples)
        timestamps = [s.timestamp_ms for s in samples]
        cut = bisect_right(timestamps, now_ms)
        if cut < n:
            return None
        chosen = samples[cut - n : cut]
        window_ms = params.window_ms
        span = chosen[-1].timestamp_ms - chosen[0].timestamp_ms
        # A gap-free window of n samples spans window_ms - period; allow one
        # missing sample of slack before declaring the stream too sparse.
        if span >= window_ms or span < window_ms - 2 * params.period_ms:
            return None
        start = chosen[0].timestamp_ms
        return SignalWindow(tuple(chosen), self.probe_id, start, start + window_ms)


@dataclass(frozen=True)
class DetectorParams:
    """Window geometry plus the configured detection algorithm and thresholds."""

    window_seconds: float = 2.0
    slide_seconds: float = 1.0
    sample_rate_hz: float = 100.0
    algorithm: str = "zscore"
    threshold_z: float = 3.0
    baseline_horizon_seconds: float = 60.0
    sta_seconds: float = 0.5
    lta_seconds: float = 2.0
    threshold_ratio: float = 4.0
    buffer_capacity_factor: int = 2

    def __post_init__(self):
        if not 0 < self.slide_seconds < self.window_seconds:
            raise ValueError("require window_seconds > slide_seconds > 0")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        n = self.window_seconds * self.sample_rate_hz
        if abs(n - round(n)) > 1e-9:
            raise ValueError("window_seconds x sample_rate_hz must be an integer sample count")
        if self.algorithm == "sta_lta" and not 0 < self.sta_seconds < self.lta_seconds <= self.window_seconds:
            raise ValueError("require sta_seconds < lta_seconds <= window_seconds")

    @property
    def window_samples(self) -> int:
        return round(self.window_seconds * self.sample_rate_hz)

    @property
    def window_ms(self) -> int:
        return round(self.window_seconds * 1000)

    @property
    def slide_ms(self) -> int:
        return round(self.slide_seconds * 1000)

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.sample_rate_hz

    @property
    def buffer_capacity(self) -> int:
        return self.window_samples * self.buffer_capacity_factor


@dataclass(frozen=True)
class DetectionResult:
    probe_id: NodeId
    window: SignalWindow
    triggered: bool
    score: float


@dataclass(frozen=True)
class QuorumPolicy:
    """How many probes must trigger, and how close together, to raise an alert."""

    mode: str = "any"
    evaluation_window_ms: int = 2000

    def __post_init__(self):
        if self.mode not in QUORUM_MODES:
            raise ValueError(f"mode must be one of {QUORUM_MODES}, got {self.mode!r}")
        if self.evaluation_window_ms <= 0:
            raise ValueError("evaluation_window_ms must be positive")


def window_magnitudes(window: SignalWindow) -> np.ndarray:
    return np.array([vector_magnitude(s) for s in window.samples], dtype=np.float64)


def zscore_detect(
    window: SignalWindow,
    baseline_mean: float,
    baseline_std: float,
    threshold_z: float = 3.0,
) -> DetectionResult:
    """Score a window by its worst standardized magnitude deviation.

    score = max over samples of |magnitude - baseline_mean| / baseline_std.
    """
    if baseline_std < DEGENERATE_STD_G:
        raise DegenerateBaseline(f"baseline_std {baseline_std} below {DEGENERATE_STD_G} g")
    mags = window_magnitudes(window)
    score = float(np.max(np.abs(mags - baseline_mean)) / baseline_std)
    return DetectionResult(window.probe_id, window, score > threshold_z, score)


def sta_lta_detect(
    window: SignalWindow,
    sta_seconds: float = 0.5,
    lta_seconds: float = 2.0,
    threshold_ratio: float = 4.0,
) -> DetectionResult:
    """Short-term over long-term average of |magnitude - 1 g| at the window tail."""
    if not 0 < sta_seconds < lta_seconds:
        raise ValueError("require 0 < sta_seconds < lta_seconds")
    n = len(window.samples)
    rate = n * 1000.0 / window.duration_ms
    n_sta = max(1, round(sta_seconds * rate))
    n_lta = min(n, max(n_sta + 1, round(lta_seconds * rate)))
    dev = np.abs(window_magnitudes(window) - GRAVITY_G)
    lta = float(np.mean(dev[-n_lta:]))
    if lta < DEGENERATE_STD_G:
        raise DegenerateBaseline(f"long-term average {lta} below {DEGENERATE_STD_G} g")
    sta = float(np.mean(dev[-n_sta:]))
    score = sta / lta
    return DetectionResult(window.probe_id, window, score > threshold_ratio, score)


def evaluate_quorum(results, policy: QuorumPolicy, probe_count: int) -> bool:
    """Decide whether the triggered subset of results satisfies the policy."""
    if probe_count < 1:
        return False
    triggered = sum(1 for r in results if r.triggered)
    if policy.mode == "any":
        return triggered >= 1
    if policy.mode == "majority":
        return triggered > probe_count / 2
    return triggered == probe_count and triggered > 0


class _BaselineEstimator:
    """Running magnitude mean/std over the trailing horizon of quiet windows."""

    def __init__(self, horizon_ms: int):
        self.horizon_ms = horizon_ms
        self._chunks: deque[tuple[int, int, float, float]] = deque()
        self._n = 0
        self._sum = 0.0
        self._sumsq = 0.0

    @property
    def seeded(self) -> bool:
        return self._n > 0

    def mean_std(self) -> tuple[float, float]:
        mean = self._sum / self._n
        var = max(0.0, self._sumsq / self._n - mean * mean)
        return mean, var**0.5

    def reset(self) -> None:
        self._chunks.clear()
        self._n = 0
        self._sum = 0.0
        self._sumsq = 0.0

    def absorb(self, window: SignalWindow) -> None:
        mags = window_magnitudes(window)
        chunk = (window.window_end_ms, len(mags), float(np.sum(mags)), float(np.sum(mags * mags)))
        self._chunks.append(chunk)
        self._n += chunk[1]
        self._sum += chunk[2]
        self._sumsq += chunk[3]

    def evict_before(self, cutoff_ms: int) -> None:
        while len(self._chunks) > 1 and self._chunks[0][0] < cutoff_ms:
            _, n, s, sq = self._chunks.popleft()
            self._n -= n
            self._sum -= s
            self._sumsq -= sq


class ZScoreDetector:
    """Stateful z-score detector: baseline learned from non-triggered windows.

    The first full window only seeds the baseline; scoring starts with the
    next one. Triggered windows never feed the baseline, so a quake does not
    poison the noise-floor estimate.
    """

    def __init__(self, threshold_z: float = 3.0, baseline_horizon_seconds: float = 60.0):
        self.threshold_z = threshold_z
        self._baseline = _BaselineEstimator(round(baseline_horizon_seconds * 1000))
        self.skipped = 0

    def evaluate(self, window: SignalWindow) -> DetectionResult | None:
        if not self._baseline.seeded:
            self._baseline.absorb(window)
            self.skipped += 1
            return None
        self._baseline.evict_before(window.window_end_ms - self._baseline.horizon_ms)
        mean, std = self._baseline.mean_std()
        try:
            result = zscore_detect(window, mean, std, self.threshold_z)
        except DegenerateBaseline:
            self._baseline.reset()
            self._baseline.absorb(window)
            self.skipped += 1
            return None
        if not result.triggered:
            self._baseline.absorb(window)
        return result


class StaLtaDetector:
    """Stateless STA/LTA trigger on |magnitude - 1 g|."""

    def __init__(self, sta_seconds: float = 0.5, lta_seconds: float = 2.0, threshold_ratio: float = 4.0):
        self.sta_seconds = sta_seconds
        self.lta_seconds = lta_seconds
        self.threshold_ratio = threshold_ratio
        self.skipped = 0

    def evaluate(self, window: SignalWindow) -> DetectionResult | None:
        try:
            return sta_lta_detect(window, self.sta_seconds, self.lta_seconds, self.threshold_ratio)
        except DegenerateBaseline:
            self.skipped += 1
            return None


def make_detector(params: DetectorParams):
    if params.algorithm == "zscore":
        return ZScoreDetector(params.threshold_z, params.baseline_horizon_seconds)
    return StaLtaDetector(params.sta_seconds, params.lta_seconds, params.threshold_ratio)


@dataclass
class PipelineAlert:
    """Quorum success: the triggered results, strongest first."""

    at_ms: int
    results: tuple[DetectionResult, ...]

    @property
    def best(self) -> DetectionResult:
        return self.results[0]


@dataclass
class _ProbeLane:
    buffer: RingBuffer
    detector: object
    last_trigger: DetectionResult | None = None
    last_trigger_ms: int = -1
    skipped_ticks: int = 0


class DetectionPipeline:
    """One detector's buffers and detector instances, one lane per probe."""

    def __init__(self, params: DetectorParams, policy: QuorumPolicy):
        self.params = params
        self.policy = policy
        self._lanes: dict[NodeId, _ProbeLane] = {}
        self.results_log: list[DetectionResult] = []

    @property
    def probe_count(self) -> int:
        return len(self._lanes)

    @property
    def probe_ids(self) -> list[NodeId]:
        return list(self._lanes)

    def attach_probe(self, probe_id: NodeId) -> None:
        if probe_id not in self._lanes:
            self._lanes[probe_id] = _ProbeLane(
                RingBuffer(probe_id, self.params.buffer_capacity), make_detector(self.params)
            )

    def detach_probe(self, probe_id: NodeId) -> None:
        self._lanes.pop(probe_id, None)

    def push(self, probe_id: NodeId, batch) -> PushResult:
        self.attach_probe(probe_id)
        return self._lanes[probe_id].buffer.push(batch)

    def tick(self, now_ms: int) -> PipelineAlert | None:
        """Extract and score one window per probe, then evaluate quorum.

        Lanes are fully independent; per-lane warm-up or degenerate-baseline
        skips are counted and never abort the tick.
        """
        if not self._lanes:
            return None
        current: list[DetectionResult] = []
        for lane in self._lanes.values():
            window = lane.buffer.extract_window(self.params, now_ms)
            if window is None:
                lane.skipped_ticks += 1
                continue
            result = lane.detector.evaluate(window)
            if result is None:
                lane.skipped_ticks += 1
                continue
            current.append(result)
            self.results_log.append(result)
            if result.triggered:
                lane.last_trigger = result
                lane.last_trigger_ms = now_ms
        # Quorum sees this tick's results plus each lane's latest trigger
        # still inside the evaluation window, so probes with different
        # onset times can be counted together.
        horizon = now_ms - self.policy.evaluation_window_ms
        considered: dict[NodeId, DetectionResult] = {r.probe_id: r for r in current}
        for probe_id, lane in self._lanes.items():
            if lane.last_trigger is not None and lane.last_trigger_ms > horizon:
                prior = considered.get(probe_id)
                if prior is None or not prior.triggered:
                    considered[probe_id] = lane.last_trigger
        if not evaluate_quorum(considered.values(), self.policy, self.probe_count):
            return None
        triggered = sorted(
            (r for r in considered.values() if r.triggered),
            key=lambda r: (-r.score, r.probe_id),
        )
        return PipelineAlert(now_ms, tuple(triggered))
