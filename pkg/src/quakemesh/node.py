"""Runnable detector and probe state machines.

Nodes are single-threaded actors: the hosting environment (simulator or a
socket shim) delivers decoded envelopes, connection lifecycle events and
timer callbacks one at a time. All outbound traffic goes through the
Transport, so the same node code runs on virtual links or real streams.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

from quakemesh.core import AccelSample, GeoLocation, NodeId
from quakemesh.detection import DetectionPipeline, DetectorParams, QuorumPolicy
from quakemesh.protocol import (
    Eew,
    EEWMessage,
    EewLog,
    Envelope,
    GossipConfig,
    MessageId,
    Neighbor,
    ProbeAssign,
    ProbeHello,
    ProbeQuery,
    Register,
    RegisterAck,
    SampleBatch,
    SeenSet,
    should_forward,
)

log = logging.getLogger(__name__)

ROLE_DETECTOR = "detector"
ROLE_PROBE = "probe"


class Transport(Protocol):
    def now_ms(self) -> int: ...

    def send(self, dst: NodeId, env: Envelope) -> None: ...

    def connect(self, dst: NodeId, role: str) -> None: ...

    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> None: ...


class SampleSource(Protocol):
    def discard_until(self, now_ms: int) -> None: ...

    def samples_until(self, now_ms: int) -> list[AccelSample]: ...


@dataclass(frozen=True)
class AlertEvent:
    """One raised alarm on one node; the local 'PA speaker' record."""

    node_id: NodeId
    message: EEWMessage
    kind: str  # local_detection | remote_gossip
    raised_at_ms: int


AlertSink = Callable[[AlertEvent], None]


def _backoff_ms(attempt: int, base_ms: int, cap_ms: int) -> int:
    return min(cap_ms, base_ms * (1 << min(attempt, 16)))


@dataclass(frozen=True)
class DetectorConfig:
    k_neighbors: int = 4
    reregister_ms: int = 30_000
    lease_ttl_ms: int = 90_000
    register_retry_base_ms: int = 2_000
    register_retry_cap_ms: int = 60_000
    origination_suppress_ms: int = 30_000


@dataclass(frozen=True)
class ProbeConfig:
    batch_interval_ms: int = 200
    query_timeout_ms: int = 2_000
    requery_delay_ms: int = 5_000
    backoff_base_ms: int = 1_000
    backoff_cap_ms: int = 60_000


class DetectorNode:
    """Edge node: buffers probe streams, originates warnings, relays gossip."""

    role = ROLE_DETECTOR

    def __init__(
        self,
        node_id: NodeId,
        location: GeoLocation,
        transport: Transport,
        alert_sink: AlertSink,
        *,
        params: DetectorParams | None = None,
        policy: QuorumPolicy | None = None,
        gossip: GossipConfig | None = None,
        authority_id: NodeId = "authority",
        config: DetectorConfig | None = None,
        endpoint: str | None = None,
    ):
        self.node_id = node_id
        self.location = location
        self.transport = transport
        self.alert_sink = alert_sink
        self.params = params or DetectorParams()
        self.policy = policy or QuorumPolicy()
        self.gossip = gossip or GossipConfig()
        self.authority_id = authority_id
        self.config = config or DetectorConfig()
        self.endpoint = endpoint or node_id

        self.pipeline = DetectionPipeline(self.params, self.policy)
        self.neighbors: dict[NodeId, Neighbor | None] = {}
        self.seen = SeenSet(self.gossip.dedup_capacity)
        self.registered = False
        self.counters: dict[str, int] = {
            "originations": 0,
            "suppressed_originations": 0,
            "relays": 0,
            "alerts_local": 0,
            "alerts_remote": 0,
            "dropped_envelopes": 0,
        }
        self._wire_seq = 0
        self._eew_seq = 0
        self._register_attempts = 0
        self._pending_peers: set[NodeId] = set()
        self._last_origination_ms: int | None = None

    def _next_seq(self) -> int:
        self._wire_seq += 1
        return self._wire_seq

    def _send(self, dst: NodeId, payload) -> None:
        self.transport.send(dst, Envelope(self.node_id, self._next_seq(), payload))

    # Bootstrap and registration.

    def start(self) -> None:
        self._attempt_register()
        self.transport.schedule(self.params.slide_ms, self._tick)

    def _register_payload(self) -> Register:
        return Register(self.location, self.endpoint, self.config.lease_ttl_ms)

    def _attempt_register(self) -> None:
        """Initial registration with backoff; inbound links work meanwhile."""
        if self.registered:
            return
        self._send(self.authority_id, self._register_payload())
        delay = _backoff_ms(
            self._register_attempts, self.config.register_retry_base_ms, self.config.register_retry_cap_ms
        )
        self._register_attempts += 1
        self.transport.schedule(delay, self._attempt_register)

    def _reregister(self) -> None:
        self._send(self.authority_id, self._register_payload())
        self.transport.schedule(self.config.reregister_ms, self._reregister)

    def _on_register_ack(self, ack: RegisterAck) -> None:
        first = not self.registered
        self.registered = True
        for neighbor in ack.neighbors:
            if neighbor.node_id in self.neighbors or neighbor.node_id in self._pending_peers:
                continue
            self._pending_peers.add(neighbor.node_id)
            self.transport.connect(neighbor.node_id, ROLE_DETECTOR)
        if first:
            log.debug("%s registered, %d neighbors offered", self.node_id, len(ack.neighbors))
            self.transport.schedule(self.config.reregister_ms, self._reregister)

    # Connection lifecycle.

    def on_peer_connected(self, peer: NodeId, role: str) -> None:
        if role == ROLE_DETECTOR:
            self.neighbors.setdefault(peer, None)

    def on_connection_established(self, peer: NodeId) -> None:
        self._pending_peers.discard(peer)
        self.neighbors.setdefault(peer, None)

    def on_connection_failed(self, peer: NodeId) -> None:
        self._pending_peers.discard(peer)

    def on_connection_lost(self, peer: NodeId) -> None:
        self.neighbors.pop(peer, None)
        self.pipeline.detach_probe(peer)

    # Inbound envelopes.

    def on_envelope(self, env: Envelope) -> None:
        payload = env.payload
        if isinstance(payload, SampleBatch):
            self.pipeline.push(env.sender, payload.samples)
        elif isinstance(payload, ProbeHello):
            self.pipeline.attach_probe(env.sender)
        elif isinstance(payload, Eew):
            self._on_remote_eew(env.sender, payload.message)
        elif isinstance(payload, RegisterAck):
            self._on_register_ack(payload)
        else:
            self.counters["dropped_envelopes"] += 1

    # Detection and gossip.

    def _tick(self) -> None:
        now = self.transport.now_ms()
        alert = self.pipeline.tick(now)
        if alert is not None:
            if (
                self._last_origination_ms is not None
                and now - self._last_origination_ms < self.config.origination_suppress_ms
            ):
                self.counters["suppressed_originations"] += 1
            else:
                self._originate(alert, now)
        self.transport.schedule(self.params.slide_ms, self._tick)

    def _originate(self, alert, now: int) -> None:
        msg = EEWMessage(
            MessageId(self.node_id, self._eew_seq),
            now,
            self.location,
            alert.best.window,
            hop_count=0,
        )
        self._eew_seq += 1
        self._last_origination_ms = now
        self.seen.add(msg.message_id)
        self.counters["originations"] += 1
        self._raise_alert(msg, "local_detection", now)
        for peer in list(self.neighbors):
            self._send(peer, Eew(msg))
        log.info("%s originated %s at %d ms", self.node_id, msg.message_id, now)

    def _on_remote_eew(self, sender: NodeId, msg: EEWMessage) -> None:
        now = self.transport.now_ms()
        first_sight = msg.message_id not in self.seen
        forward = should_forward(msg, self.location, self.seen, self.gossip)
        if first_sight:
            self._raise_alert(msg, "remote_gossip", now)
        if forward:
            relayed = msg.forwarded()
            self.counters["relays"] += 1
            for peer in list(self.neighbors):
                if peer != sender:
                    self._send(peer, Eew(relayed))

    def _raise_alert(self, msg: EEWMessage, kind: str, now: int) -> None:
        key = "alerts_local" if kind == "local_detection" else "alerts_remote"
        self.counters[key] += 1
        self.alert_sink(AlertEvent(self.node_id, msg, kind, now))
        # Every first-sight warning is reported for logging; a dead authority
        # just loses the report, never the gossip.
        self._send(self.authority_id, EewLog(msg))


class ProbeNode:
    """Sensor node: finds a detector through the authority and streams to it."""

    role = ROLE_PROBE

    def __init__(
        self,
        node_id: NodeId,
        location: GeoLocation,
        transport: Transport,
        source: SampleSource,
        *,
        authority_id: NodeId = "authority",
        config: ProbeConfig | None = None,
        known_detector: Neighbor | None = None,
    ):
        self.node_id = node_id
        self.location = location
        self.transport = transport
        self.source = source
        self.authority_id = authority_id
        self.config = config or ProbeConfig()
        self.known_detector = known_detector

        self.assigned: Neighbor | None = None
        self.counters: dict[str, int] = {"batches_sent": 0, "queries": 0, "reassignments": 0}
        self._wire_seq = 0
        self._exclude: tuple[NodeId, ...] = ()
        self._query_attempts = 0
        self._query_token = 0
        self._stream_token = 0
        self._pending: Neighbor | None = None

    def _next_seq(self) -> int:
        self._wire_seq += 1
        return self._wire_seq

    def _send(self, dst: NodeId, payload) -> None:
        self.transport.send(dst, Envelope(self.node_id, self._next_seq(), payload))

    def start(self) -> None:
        self._query_authority()

    def _query_authority(self) -> None:
        if self.assigned is not None or self._pending is not None:
            return
        self.counters["queries"] += 1
        self._query_token += 1
        token = self._query_token
        self._send(self.authority_id, ProbeQuery(self.location, self._exclude))
        self.transport.schedule(self.config.query_timeout_ms, lambda: self._query_timed_out(token))

    def _query_timed_out(self, token: int) -> None:
        if token != self._query_token or self.assigned is not None or self._pending is not None:
            return
        if self.known_detector is not None and self.known_detector.node_id not in self._exclude:
            # Authority unreachable: fall back to the last detector we knew.
            self._connect(self.known_detector)
        else:
            self._retry_query()

    def _retry_query(self) -> None:
        delay = _backoff_ms(self._query_attempts, self.config.backoff_base_ms, self.config.backoff_cap_ms)
        self._query_attempts += 1
        self.transport.schedule(delay, self._query_authority)

    def on_envelope(self, env: Envelope) -> None:
        payload = env.payload
        if isinstance(payload, ProbeAssign):
            self._query_token += 1  # cancel the pending timeout
            if payload.detector is None:
                self._retry_query()
            elif self.assigned is None and self._pending is None:
                self._connect(payload.detector)

    def _connect(self, detector: Neighbor) -> None:
        self._pending = detector
        self.transport.connect(detector.node_id, ROLE_PROBE)

    def on_connection_established(self, peer: NodeId) -> None:
        if self._pending is None or peer != self._pending.node_id:
            return
        self.assigned = self._pending
        self._pending = None
        self.known_detector = self.assigned
        self._exclude = ()
        self._query_attempts = 0
        now = self.transport.now_ms()
        self._send(peer, ProbeHello(self.location))
        self.source.discard_until(now)
        self._stream_token += 1
        token = self._stream_token
        self.transport.schedule(self.config.batch_interval_ms, lambda: self._stream(token))
        log.debug("%s streaming to %s from %d ms", self.node_id, peer, now)

    def on_connection_failed(self, peer: NodeId) -> None:
        if self._pending is not None and peer == self._pending.node_id:
            self._pending = None
            self._exclude = (peer,)
            self._retry_query()

    def on_connection_lost(self, peer: NodeId) -> None:
        if self.assigned is not None and peer == self.assigned.node_id:
            self.assigned = None
            self._stream_token += 1
            self._exclude = (peer,)
            self.counters["reassignments"] += 1
            self.transport.schedule(self.config.requery_delay_ms, self._query_authority)

    def on_peer_connected(self, peer: NodeId, role: str) -> None:
        pass  # probes accept no inbound links

    def _stream(self, token: int) -> None:
        if token != self._stream_token or self.assigned is None:
            return
        now = self.transport.now_ms()
        samples = self.source.samples_until(now)
        if samples:
            self._send(self.assigned.node_id, SampleBatch(tuple(samples)))
            self.counters["batches_sent"] += 1
        self.transport.schedule(self.config.batch_interval_ms, lambda: self._stream(token))
