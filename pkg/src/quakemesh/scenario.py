"""Declarative experiment files: schema, validation, loading.

A scenario is a YAML document with a versioned schema header. Validation
collects every problem with its field path before failing, so a bad file
is diagnosed in one pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from quakemesh.core import GeoLocation
from quakemesh.detection import DetectorParams, QuorumPolicy
from quakemesh.protocol import GossipConfig

log = logging.getLogger(__name__)

SCENARIO_SCHEMA = "quakemesh/scenario/v1"

FAULT_ACTIONS = (
    "crash_node",
    "revive_node",
    "partition",
    "heal_partition",
    "authority_down",
    "authority_up",
)


class InvalidScenario(Exception):
    """Scenario rejected; each error names the offending field."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass(frozen=True)
class DetectorSpec:
    node_id: str
    location: GeoLocation


@dataclass(frozen=True)
class ProbeSpec:
    node_id: str
    location: GeoLocation
    detector: str = "auto"


@dataclass(frozen=True)
class QuakeSpec:
    epicenter: GeoLocation
    origin_time_ms: int
    amplitude_g: float
    wave_speed_km_s: float = 6.0
    duration_s: float = 5.0


@dataclass(frozen=True)
class FaultAction:
    at_ms: int
    action: str
    node: str | None = None
    groups: tuple[tuple[str, ...], ...] | None = None


@dataclass(frozen=True)
class AuthoritySettings:
    k: int = 4
    ttl_ms: int = 90_000
    replicas: int = 1
    replicate_interval_ms: int = 10_000
    expiry_interval_ms: int = 30_000


@dataclass(frozen=True)
class NetworkSettings:
    latency_ms: int = 20
    loss_probability: float = 0.0
    failure_detect_ms: int = 1000


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_ms: int
    seeds: tuple[int, ...]
    detectors: tuple[DetectorSpec, ...]
    probes: tuple[ProbeSpec, ...] = ()
    quakes: tuple[QuakeSpec, ...] = ()
    faults: tuple[FaultAction, ...] = ()
    gossip: GossipConfig = field(default_factory=GossipConfig)
    detection: DetectorParams = field(default_factory=DetectorParams)
    quorum: QuorumPolicy = field(default_factory=QuorumPolicy)
    authority: AuthoritySettings = field(default_factory=AuthoritySettings)
    network: NetworkSettings = field(default_factory=NetworkSettings)
    noise_floor_g: float = 1e-3


class _Validator:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, path: str, message: str) -> None:
        self.errors.append(f"{path}: {message}")

    def expect_mapping(self, obj, path: str) -> dict:
        if obj is None:
            return {}
        if not isinstance(obj, dict):
            self.fail(path, "must be a mapping")
            return {}
        return obj

    def expect_list(self, obj, path: str) -> list:
        if obj is None:
            return []
        if not isinstance(obj, list):
            self.fail(path, "must be a list")
            return []
        return obj

    def integer(self, obj: dict, key: str, path: str, default=None, minimum=None):
        v = obj.get(key, default)
        if v is None:
            self.fail(f"{path}.{key}", "is required")
            return default
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"{path}.{key}", f"must be an integer, got {v!r}")
            return default
        if minimum is not None and v < minimum:
            self.fail(f"{path}.{key}", f"must be >= {minimum}, got {v}")
        return v

    def number(self, obj: dict, key: str, path: str, default=None, minimum=None):
        v = obj.get(key, default)
        if v is None:
            self.fail(f"{path}.{key}", "is required")
            return default
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"{path}.{key}", f"must be a number, got {v!r}")
            return default
        if minimum is not None and v <= minimum:
            self.fail(f"{path}.{key}", f"must be > {minimum}, got {v}")
        return float(v)

    def string(self, obj: dict, key: str, path: str, default=None):
        v = obj.get(key, default)
        if not isinstance(v, str) or not v:
            self.fail(f"{path}.{key}", "must be a non-empty string")
            return default
        return v

    def location(self, obj: dict, path: str) -> GeoLocation | None:
        lat = obj.get("lat")
        lon = obj.get("lon")
        if not isinstance(lat, (int, float)) or not isinstance(lon, (int, float)):
            self.fail(path, "needs numeric lat and lon")
            return None
        try:
            return GeoLocation(float(lat), float(lon))
        except ValueError as exc:
            self.fail(path, str(exc))
            return None


def scenario_from_dict(doc: dict, name_hint: str = "scenario") -> Scenario:
    v = _Validator()
    if not isinstance(doc, dict):
        raise InvalidScenario(["document: must be a mapping"])

    schema = doc.get("schema")
    if schema != SCENARIO_SCHEMA:
        v.fail("schema", f"must be {SCENARIO_SCHEMA!r}, got {schema!r}")

    name = doc.get("name", name_hint)
    if not isinstance(name, str) or not name:
        v.fail("name", "must be a non-empty string")
        name = name_hint
    duration_ms = v.integer(doc, "duration_ms", "", minimum=1) or 1

    seeds_raw = v.expect_list(doc.get("seeds", [0]), "seeds")
    seeds: list[int] = []
    for i, s in enumerate(seeds_raw):
        if isinstance(s, bool) or not isinstance(s, int):
            v.fail(f"seeds[{i}]", f"must be an integer, got {s!r}")
        else:
            seeds.append(s)
    if not seeds:
        v.fail("seeds", "must name at least one seed")
        seeds = [0]

    known_ids: set[str] = set()
    detectors: list[DetectorSpec] = []
    for i, d in enumerate(v.expect_list(doc.get("detectors"), "detectors")):
        path = f"detectors[{i}]"
        d = v.expect_mapping(d, path)
        node_id = v.string(d, "id", path)
        loc = v.location(d, path)
        if node_id:
            if node_id in known_ids:
                v.fail(f"{path}.id", f"duplicate node id {node_id!r}")
            known_ids.add(node_id)
        if node_id and loc:
            detectors.append(DetectorSpec(node_id, loc))
    if not detectors and not v.errors:
        v.fail("detectors", "must define at least one detector")

    detector_ids = {d.node_id for d in detectors}
    probes: list[ProbeSpec] = []
    for i, p in enumerate(v.expect_list(doc.get("probes"), "probes")):
        path = f"probes[{i}]"
        p = v.expect_mapping(p, path)
        node_id = v.string(p, "id", path)
        loc = v.location(p, path)
        pinned = p.get("detector", "auto")
        if not isinstance(pinned, str) or not pinned:
            v.fail(f"{path}.detector", "must be 'auto' or a detector id")
            pinned = "auto"
        elif pinned != "auto" and pinned not in detector_ids:
            v.fail(f"{path}.detector", f"references unknown detector {pinned!r}")
        if node_id:
            if node_id in known_ids:
                v.fail(f"{path}.id", f"duplicate node id {node_id!r}")
            known_ids.add(node_id)
        if node_id and loc:
            probes.append(ProbeSpec(node_id, loc, pinned))

    quakes: list[QuakeSpec] = []
    for i, q in enumerate(v.expect_list(doc.get("quakes"), "quakes")):
        path = f"quakes[{i}]"
        q = v.expect_mapping(q, path)
        loc = v.location(q, path)
        origin = v.integer(q, "origin_time_ms", path, default=0, minimum=0)
        amplitude = v.number(q, "amplitude_g", path, minimum=0.0)
        speed = v.number(q, "wave_speed_km_s", path, default=6.0, minimum=0.0)
        duration = v.number(q, "duration_s", path, default=5.0, minimum=0.0)
        if loc and amplitude:
            quakes.append(QuakeSpec(loc, origin, amplitude, speed, duration))

    faults: list[FaultAction] = []
    for i, f in enumerate(v.expect_list(doc.get("faults"), "faults")):
        path = f"faults[{i}]"
        f = v.expect_mapping(f, path)
        at_ms = v.integer(f, "at_ms", path, minimum=0) or 0
        action = f.get("action")
        if action not in FAULT_ACTIONS:
            v.fail(f"{path}.action", f"must be one of {FAULT_ACTIONS}, got {action!r}")
            continue
        node = None
        groups = None
        if action in ("crash_node", "revive_node"):
            node = v.string(f, "node", path)
            if node and node not in known_ids:
                v.fail(f"{path}.node", f"references unknown node {node!r}")
        elif action == "partition":
            raw_groups = v.expect_list(f.get("groups"), f"{path}.groups")
            if len(raw_groups) < 2:
                v.fail(f"{path}.groups", "needs at least two groups")
            seen_members: set[str] = set()
            parsed: list[tuple[str, ...]] = []
            for gi, group in enumerate(raw_groups):
                members = v.expect_list(group, f"{path}.groups[{gi}]")
                for m in members:
                    if not isinstance(m, str) or m not in known_ids:
                        v.fail(f"{path}.groups[{gi}]", f"references unknown node {m!r}")
                    elif m in seen_members:
                        v.fail(f"{path}.groups[{gi}]", f"node {m!r} appears in two groups")
                    else:
                        seen_members.add(m)
                parsed.append(tuple(str(m) for m in members))
            groups = tuple(parsed)
        faults.append(FaultAction(at_ms, action, node, groups))

    gossip_doc = v.expect_mapping(doc.get("gossip"), "gossip")
    detection_doc = v.expect_mapping(doc.get("detection"), "detection")
    quorum_doc = v.expect_mapping(doc.get("quorum"), "quorum")
    authority_doc = v.expect_mapping(doc.get("authority"), "authority")
    network_doc = v.expect_mapping(doc.get("network"), "network")

    gossip = GossipConfig()
    try:
        gossip = GossipConfig(
            max_distance_km=float(gossip_doc.get("max_distance_km", 100.0)),
            max_hops=int(gossip_doc.get("max_hops", 16)),
            dedup_capacity=int(gossip_doc.get("dedup_capacity", 4096)),
        )
    except (TypeError, ValueError) as exc:
        v.fail("gossip", str(exc))

    detection = DetectorParams()
    try:
        defaults = DetectorParams()
        detection = DetectorParams(
            window_seconds=float(detection_doc.get("window_seconds", defaults.window_seconds)),
            slide_seconds=float(detection_doc.get("slide_seconds", defaults.slide_seconds)),
            sample_rate_hz=float(detection_doc.get("sample_rate_hz", defaults.sample_rate_hz)),
            algorithm=detection_doc.get("algorithm", defaults.algorithm),
            threshold_z=float(detection_doc.get("threshold_z", defaults.threshold_z)),
            baseline_horizon_seconds=float(
                detection_doc.get("baseline_horizon_seconds", defaults.baseline_horizon_seconds)
            ),
            sta_seconds=float(detection_doc.get("sta_seconds", defaults.sta_seconds)),
            lta_seconds=float(detection_doc.get("lta_seconds", defaults.lta_seconds)),
            threshold_ratio=float(detection_doc.get("threshold_ratio", defaults.threshold_ratio)),
        )
    except (TypeError, ValueError) as exc:
        v.fail("detection", str(exc))

    quorum = QuorumPolicy()
    try:
        quorum = QuorumPolicy(
            mode=quorum_doc.get("mode", "any"),
            evaluation_window_ms=int(quorum_doc.get("evaluation_window_ms", 2000)),
        )
    except (TypeError, ValueError) as exc:
        v.fail("quorum", str(exc))

    authority = AuthoritySettings()
    try:
        authority = AuthoritySettings(
            k=int(authority_doc.get("k", 4)),
            ttl_ms=int(authority_doc.get("ttl_ms", 90_000)),
            replicas=int(authority_doc.get("replicas", 1)),
            replicate_interval_ms=int(authority_doc.get("replicate_interval_ms", 10_000)),
            expiry_interval_ms=int(authority_doc.get("expiry_interval_ms", 30_000)),
        )
        if authority.k < 1 or authority.ttl_ms <= 0 or authority.replicas < 1:
            v.fail("authority", "k, ttl_ms and replicas must be positive")
    except (TypeError, ValueError) as exc:
        v.fail("authority", str(exc))

    network = NetworkSettings()
    try:
        network = NetworkSettings(
            latency_ms=int(network_doc.get("latency_ms", 20)),
            loss_probability=float(network_doc.get("loss_probability", 0.0)),
            failure_detect_ms=int(network_doc.get("failure_detect_ms", 1000)),
        )
        if network.latency_ms < 0 or not 0.0 <= network.loss_probability < 1.0:
            v.fail("network", "latency must be >= 0 and loss_probability in [0, 1)")
    except (TypeError, ValueError) as exc:
        v.fail("network", str(exc))

    noise = doc.get("noise_floor_g", 1e-3)
    if isinstance(noise, bool) or not isinstance(noise, (int, float)) or noise <= 0:
        v.fail("noise_floor_g", f"must be a positive number, got {noise!r}")
        noise = 1e-3

    if v.errors:
        raise InvalidScenario(v.errors)

    return Scenario(
        name=name,
        duration_ms=duration_ms,
        seeds=tuple(seeds),
        detectors=tuple(detectors),
        probes=tuple(probes),
        quakes=tuple(quakes),
        faults=tuple(faults),
        gossip=gossip,
        detection=detection,
        quorum=quorum,
        authority=authority,
        network=network,
        noise_floor_g=float(noise),
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidScenario([f"file: {exc}"]) from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidScenario([f"yaml: {exc}"]) from exc
    return scenario_from_dict(doc, name_hint=path.stem)
