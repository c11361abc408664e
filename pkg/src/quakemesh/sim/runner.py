"""Orchestration: build nodes from a scenario, run the event loop, report.

The simulator core is single-threaded over the event queue; node actors
are cooperatively scheduled inside it. Identical (scenario, seed) inputs
produce byte-identical serialized reports.
"""

from __future__ import annotations

import logging
import zlib

from quakemesh.authority import DetectorRecord, EewLogEntry, LocalAuthority
from quakemesh.core import GeoLocation, NodeId
from quakemesh.detection import DetectorParams, QuorumPolicy
from quakemesh.node import AlertEvent, DetectorConfig, DetectorNode, Envelope, Neighbor, ProbeConfig, ProbeNode
from quakemesh.protocol import EewLog, GossipConfig, ProbeAssign, ProbeQuery, Register, RegisterAck
from quakemesh.scenario import AuthoritySettings, FaultAction, NetworkSettings, Scenario
from quakemesh.sim.network import LinkSpec, VirtualNetwork
from quakemesh.sim.report import SimReport, audit, compute_metrics
from quakemesh.sim.signals import GaussianStreamSource, QuakeSource, inject_quake, rng_for

log = logging.getLogger(__name__)


class UnknownNode(Exception):
    pass


class AuthorityActor:
    """One authority replica bound to the virtual network."""

    role = "authority"

    def __init__(
        self,
        node_id: NodeId,
        settings: AuthoritySettings,
        peers: tuple[NodeId, ...],
    ):
        self.node_id = node_id
        self.settings = settings
        self.peers = peers
        self.state = LocalAuthority()
        self.transport = None  # bound by the simulation
        self._wire_seq = 0

    def _reply(self, dst: NodeId, payload) -> None:
        self._wire_seq += 1
        self.transport.send(dst, Envelope(self.node_id, self._wire_seq, payload))

    def start(self) -> None:
        self.transport.schedule(self.settings.expiry_interval_ms, self._expiry_tick)
        if self.peers:
            self.transport.schedule(self.settings.replicate_interval_ms, self._replicate_tick)

    def _expiry_tick(self) -> None:
        self.state.expire_leases(self.transport.now_ms())
        self.transport.schedule(self.settings.expiry_interval_ms, self._expiry_tick)

    def _replicate_tick(self) -> None:
        snapshot = self.state.snapshot()
        for peer in self.peers:
            self.transport.net.sync(
                self.node_id,
                peer,
                lambda p=peer, s=snapshot: self.transport.net.bindings[p].actor.state.replicate(s),
            )
        self.transport.schedule(self.settings.replicate_interval_ms, self._replicate_tick)

    def on_envelope(self, env: Envelope) -> None:
        now = self.transport.now_ms()
        payload = env.payload
        if isinstance(payload, Register):
            rec = DetectorRecord(env.sender, payload.location, payload.endpoint, now, payload.ttl_ms)
            neighbors = self.state.register_detector(rec, self.settings.k)
            self._reply(env.sender, RegisterAck(tuple(neighbors)))
        elif isinstance(payload, ProbeQuery):
            chosen = self.state.assign_probe(payload.location, now, payload.exclude)
            self._reply(env.sender, ProbeAssign(chosen))
        elif isinstance(payload, EewLog):
            self.state.log_eew(EewLogEntry(now, payload.message, env.sender))

    def on_peer_connected(self, peer: NodeId, role: str) -> None:
        pass

    def on_connection_established(self, peer: NodeId) -> None:
        pass

    def on_connection_failed(self, peer: NodeId) -> None:
        pass

    def on_connection_lost(self, peer: NodeId) -> None:
        pass


class Simulation:
    """Programmatic builder plus the event loop for one seeded run."""

    def __init__(
        self,
        seed: int,
        *,
        name: str = "adhoc",
        network: NetworkSettings | None = None,
        gossip: GossipConfig | None = None,
        detection: DetectorParams | None = None,
        quorum: QuorumPolicy | None = None,
        authority: AuthoritySettings | None = None,
        noise_floor_g: float = 1e-3,
    ):
        self.seed = seed
        self.name = name
        self.network_settings = network or NetworkSettings()
        self.gossip = gossip or GossipConfig()
        self.detection = detection or DetectorParams()
        self.quorum = quorum or QuorumPolicy()
        self.authority_settings = authority or AuthoritySettings()
        self.noise_floor_g = noise_floor_g

        self.net = VirtualNetwork(
            seed,
            LinkSpec(self.network_settings.latency_ms, self.network_settings.loss_probability),
            self.network_settings.failure_detect_ms,
        )
        self.alerts: list[AlertEvent] = []
        self.onsets: dict[str, int] = {}
        self.fault_log: list[dict] = []
        self._node_rows: list[dict] = []
        self._start_order: list[str] = []
        self._start_times: dict[str, int] = {}
        self._detector_specs: dict[str, dict] = {}
        self._probe_specs: dict[str, dict] = {}
        self._sources: dict[str, GaussianStreamSource] = {}
        self._probe_locations: dict[str, GeoLocation] = {}

        self.authority_ids = tuple(
            f"authority{i + 1}" if self.authority_settings.replicas > 1 else "authority"
            for i in range(self.authority_settings.replicas)
        )
        self.authorities: dict[str, AuthorityActor] = {}
        for i, aid in enumerate(self.authority_ids):
            ring_peer = self.authority_ids[(i + 1) % len(self.authority_ids)]
            peers = (ring_peer,) if len(self.authority_ids) > 1 else ()
            actor = AuthorityActor(aid, self.authority_settings, peers)
            actor.transport = self.net.register(aid, actor, "authority")
            self.authorities[aid] = actor
            self._node_rows.append({"id": aid, "role": "authority", "lat": None, "lon": None})
            self._start_order.append(aid)

    def _sink(self, event: AlertEvent) -> None:
        self.alerts.append(event)

    def authority_for(self, node_id: str) -> str:
        return self.authority_ids[zlib.crc32(node_id.encode("utf-8")) % len(self.authority_ids)]

    def add_detector(
        self,
        node_id: str,
        location: GeoLocation,
        *,
        node_cls=DetectorNode,
        config: DetectorConfig | None = None,
        start_at_ms: int = 0,
    ) -> DetectorNode:
        config = config or DetectorConfig(
            k_neighbors=self.authority_settings.k, lease_ttl_ms=self.authority_settings.ttl_ms
        )
        spec = {"node_id": node_id, "location": location, "node_cls": node_cls, "config": config}
        self._detector_specs[node_id] = spec
        actor = self._build_detector(spec)
        self.net.register(node_id, actor, "detector")
        actor.transport = self.net.bindings[node_id]
        self._node_rows.append(
            {"id": node_id, "role": "detector", "lat": location.latitude_deg, "lon": location.longitude_deg}
        )
        self._start_order.append(node_id)
        self._start_times[node_id] = start_at_ms
        return actor

    def _build_detector(self, spec: dict) -> DetectorNode:
        actor = spec["node_cls"](
            spec["node_id"],
            spec["location"],
            None,
            self._sink,
            params=self.detection,
            policy=self.quorum,
            gossip=self.gossip,
            authority_id=self.authority_for(spec["node_id"]),
            config=spec["config"],
        )
        return actor

    def add_probe(
        self,
        node_id: str,
        location: GeoLocation,
        *,
        pinned_detector: str | None = None,
        config: ProbeConfig | None = None,
        start_at_ms: int = 0,
    ) -> ProbeNode:
        known = None
        if pinned_detector is not None:
            det_spec = self._detector_specs.get(pinned_detector)
            if det_spec is None:
                raise UnknownNode(f"probe {node_id!r} pins unknown detector {pinned_detector!r}")
            known = Neighbor(pinned_detector, pinned_detector, det_spec["location"])
        source = GaussianStreamSource(rng_for(self.seed, "probe", node_id), self.noise_floor_g)
        self._sources[node_id] = source
        self._probe_locations[node_id] = location
        spec = {"node_id": node_id, "location": location, "config": config or ProbeConfig(), "known": known}
        self._probe_specs[node_id] = spec
        actor = self._build_probe(spec)
        self.net.register(node_id, actor, "probe")
        actor.transport = self.net.bindings[node_id]
        self._node_rows.append(
            {"id": node_id, "role": "probe", "lat": location.latitude_deg, "lon": location.longitude_deg}
        )
        self._start_order.append(node_id)
        self._start_times[node_id] = start_at_ms
        return actor

    def _build_probe(self, spec: dict) -> ProbeNode:
        return ProbeNode(
            spec["node_id"],
            spec["location"],
            None,
            self._sources[spec["node_id"]],
            authority_id=self.authority_for(spec["node_id"]),
            config=spec["config"],
            known_detector=spec["known"],
        )

    def add_quake(self, quake: QuakeSource) -> dict[str, int]:
        onsets = inject_quake(self._sources, quake, self._probe_locations)
        self.onsets.update(onsets)
        return onsets

    def schedule_fault(self, action: FaultAction) -> None:
        self._validate_fault(action)
        self.net.queue.push(action.at_ms, lambda: self._apply_fault(action))

    def _validate_fault(self, action: FaultAction) -> None:
        if action.action in ("crash_node", "revive_node"):
            if action.node not in self.net.bindings:
                raise UnknownNode(f"fault {action.action} references unknown node {action.node!r}")
        elif action.action == "partition":
            for group in action.groups or ():
                for member in group:
                    if member not in self.net.bindings:
                        raise UnknownNode(f"partition references unknown node {member!r}")

    def _apply_fault(self, action: FaultAction) -> None:
        now = self.net.queue.now
        entry = {"t_ms": now, "action": action.action}
        if action.action == "crash_node":
            entry["node"] = action.node
            self.net.crash(action.node)
        elif action.action == "revive_node":
            entry["node"] = action.node
            self._revive(action.node)
        elif action.action == "partition":
            entry["groups"] = [list(g) for g in action.groups or ()]
            self.net.partition([list(g) for g in action.groups or ()])
        elif action.action == "heal_partition":
            self.net.heal_partition()
        elif action.action == "authority_down":
            for aid in self.authority_ids:
                self.net.mute(aid)
        elif action.action == "authority_up":
            for aid in self.authority_ids:
                self.net.unmute(aid)
        self.fault_log.append(entry)

    def _revive(self, node_id: str) -> None:
        if node_id in self._detector_specs:
            actor = self._build_detector(self._detector_specs[node_id])
        elif node_id in self._probe_specs:
            actor = self._build_probe(self._probe_specs[node_id])
        else:
            raise UnknownNode(node_id)
        self.net.revive(node_id, actor)
        actor.transport = self.net.bindings[node_id]
        self.net.queue.push(self.net.queue.now, actor.start)

    def run(self, duration_ms: int) -> SimReport:
        for node_id in self._start_order:
            binding = self.net.bindings[node_id]
            self.net.queue.push(self._start_times.get(node_id, 0), binding.actor.start)
        self.net.queue.run_until(duration_ms)
        return self._build_report(duration_ms)

    def _build_report(self, duration_ms: int) -> SimReport:
        eew_log = []
        for aid in self.authority_ids:
            for entry in self.authorities[aid].state.log_entries():
                eew_log.append(
                    {
                        "authority": aid,
                        "received_at_ms": entry.received_at_ms,
                        "reporter": entry.reporter,
                        "origin": entry.message.message_id.origin,
                        "seq": entry.message.message_id.seq,
                    }
                )
        counters = {}
        for node_id in self._start_order:
            binding = self.net.bindings[node_id]
            actor = binding.actor
            if hasattr(actor, "counters"):
                counters[node_id] = dict(actor.counters)
        report = SimReport(
            scenario_name=self.name,
            seed=self.seed,
            duration_ms=duration_ms,
            nodes=self._node_rows,
            alerts=list(self.alerts),
            transmissions=self.net.transmissions,
            link_events=self.net.link_events,
            eew_log=eew_log,
            onsets=self.onsets,
            counters=counters,
            fault_log=self.fault_log,
            gossip=self.gossip,
        )
        compute_metrics(report)
        report.audit_result = audit(report)
        return report


def apply_fault(sim: Simulation, action: FaultAction) -> None:
    """Validate and apply a fault at the simulation's current time."""
    sim._validate_fault(action)
    sim._apply_fault(action)


def build_simulation(scenario: Scenario, seed: int) -> Simulation:
    sim = Simulation(
        seed,
        name=scenario.name,
        network=scenario.network,
        gossip=scenario.gossip,
        detection=scenario.detection,
        quorum=scenario.quorum,
        authority=scenario.authority,
        noise_floor_g=scenario.noise_floor_g,
    )
    for d in scenario.detectors:
        sim.add_detector(d.node_id, d.location)
    for p in scenario.probes:
        sim.add_probe(p.node_id, p.location, pinned_detector=None if p.detector == "auto" else p.detector)
    for q in scenario.quakes:
        sim.add_quake(
            QuakeSource(
                q.epicenter,
                q.origin_time_ms,
                q.amplitude_g,
                q.wave_speed_km_s,
                q.duration_s,
                scenario.noise_floor_g,
            )
        )
    for f in scenario.faults:
        sim.schedule_fault(f)
    return sim


def run_scenario(scenario: Scenario, seed: int) -> SimReport:
    """Execute one seeded run of a validated scenario."""
    log.info("running scenario %s with seed %d", scenario.name, seed)
    return build_simulation(scenario, seed).run(scenario.duration_ms)
