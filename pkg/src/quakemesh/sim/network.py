"""Virtual network: seeded event queue, lossy links, crash and partition state.

Every transmission is encoded to wire bytes on send and decoded on
delivery, so the codec sits on the hot path exactly as it would over real
sockets, and the audit log records true frame sizes. Determinism contract:
events run in strict (time, insertion) order and all randomness comes from
per-directed-link streams, so faults on one path never shift the draws of
another.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Callable

from quakemesh.protocol import Eew, EewLog, Envelope, decode, encode
from quakemesh.sim.signals import rng_for

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkSpec:
    latency_ms: int = 20
    loss_probability: float = 0.0
    up: bool = True

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be non-negative")
        if not 0.0 <= self.loss_probability < 1.0:
            raise ValueError("loss_probability must be in [0, 1)")


class EventQueue:
    """Strict (timestamp, insertion-sequence) ordered callback queue."""

    def __init__(self):
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self.now = 0

    def push(self, at_ms: int, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (max(at_ms, self.now), self._seq, fn))
        self._seq += 1

    def run_until(self, end_ms: int) -> None:
        while self._heap and self._heap[0][0] <= end_ms:
            at, _, fn = heapq.heappop(self._heap)
            self.now = at
            fn()
        self.now = end_ms


@dataclass
class Transmission:
    """One attempted send; status is finalized at loss/drop/delivery time."""

    t_ms: int
    src: str
    dst: str
    kind: str
    size_bytes: int
    status: str
    src_role: str
    dst_role: str
    delivered_at_ms: int | None = None
    eew_origin: str | None = None
    eew_seq: int | None = None
    hop_count: int | None = None
    origin_lat: float | None = None
    origin_lon: float | None = None


@dataclass
class LinkEvent:
    t_ms: int
    event: str  # open | close
    a: str
    b: str
    reason: str


class _Binding:
    """Per-node transport adapter with liveness and incarnation guards."""

    def __init__(self, net: "VirtualNetwork", node_id: str, actor, role: str):
        self.net = net
        self.node_id = node_id
        self.actor = actor
        self.role = role
        self.alive = True
        self.incarnation = 0

    def now_ms(self) -> int:
        return self.net.queue.now

    def send(self, dst: str, env: Envelope) -> None:
        if self.alive:
            self.net.send(self.node_id, dst, env)

    def connect(self, dst: str, role: str) -> None:
        if self.alive:
            self.net.connect(self.node_id, dst, role)

    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> None:
        inc = self.incarnation
        self.net.queue.push(
            self.net.queue.now + delay_ms,
            lambda: fn() if self.alive and self.incarnation == inc else None,
        )


class VirtualNetwork:
    def __init__(
        self,
        seed: int,
        default_link: LinkSpec | None = None,
        failure_detect_ms: int = 1000,
    ):
        self.queue = EventQueue()
        self.seed = seed
        self.default_link = default_link or LinkSpec()
        self.failure_detect_ms = failure_detect_ms
        self.bindings: dict[str, _Binding] = {}
        self.transmissions: list[Transmission] = []
        self.link_events: list[LinkEvent] = []
        self._connections: dict[frozenset, None] = {}
        self._cut_pairs: set[frozenset] = set()
        self._down: set[str] = set()
        self._muted: set[str] = set()
        self._loss_rngs: dict[tuple[str, str], object] = {}

    # Topology state.

    def register(self, node_id: str, actor, role: str) -> _Binding:
        if node_id in self.bindings:
            raise ValueError(f"duplicate node id {node_id!r}")
        binding = _Binding(self, node_id, actor, role)
        self.bindings[node_id] = binding
        return binding

    def role_of(self, node_id: str) -> str:
        binding = self.bindings.get(node_id)
        return binding.role if binding else "unknown"

    def link_up(self, a: str, b: str) -> bool:
        if frozenset((a, b)) in self._cut_pairs:
            return False
        return self.default_link.up

    def is_down(self, node_id: str) -> bool:
        return node_id in self._down

    def connections(self) -> list[frozenset]:
        return list(self._connections)

    def _loss_rng(self, src: str, dst: str):
        key = (src, dst)
        if key not in self._loss_rngs:
            self._loss_rngs[key] = rng_for(self.seed, "link", src, dst)
        return self._loss_rngs[key]

    # Messaging.

    def send(self, src: str, dst: str, env: Envelope) -> None:
        frame = encode(env)
        rec = Transmission(
            self.queue.now,
            src,
            dst,
            env.kind,
            len(frame),
            "pending",
            self.role_of(src),
            self.role_of(dst),
        )
        payload = env.payload
        if isinstance(payload, (Eew, EewLog)):
            msg = payload.message
            rec.eew_origin = msg.message_id.origin
            rec.eew_seq = msg.message_id.seq
            rec.hop_count = msg.hop_count
            rec.origin_lat = msg.origin_location.latitude_deg
            rec.origin_lon = msg.origin_location.longitude_deg
        self.transmissions.append(rec)
        if src in self._down:
            rec.status = "sender_down"
            return
        if dst not in self.bindings or not self.link_up(src, dst):
            rec.status = "link_down"
            return
        spec = self.default_link
        # Loss applies to gossip datagrams only; probe streams and authority
        # exchanges model reliable transports (they still die with the link).
        if (
            isinstance(env.payload, Eew)
            and spec.loss_probability > 0.0
            and self._loss_rng(src, dst).random() < spec.loss_probability
        ):
            rec.status = "lost"
            return
        self.queue.push(self.queue.now + spec.latency_ms, lambda: self._deliver(rec, frame))

    def _deliver(self, rec: Transmission, frame: bytes) -> None:
        if rec.dst in self._down:
            rec.status = "dest_down"
            return
        if rec.dst in self._muted:
            rec.status = "dest_muted"
            return
        if not self.link_up(rec.src, rec.dst):
            rec.status = "cut_in_flight"
            return
        rec.status = "delivered"
        rec.delivered_at_ms = self.queue.now
        binding = self.bindings[rec.dst]
        if binding.alive:
            binding.actor.on_envelope(decode(frame))

    # Connection lifecycle (peer links and probe sessions).

    def connect(self, src: str, dst: str, role: str) -> None:
        self.queue.push(self.queue.now + self.default_link.latency_ms, lambda: self._finish_connect(src, dst, role))

    def _finish_connect(self, src: str, dst: str, role: str) -> None:
        src_binding = self.bindings.get(src)
        if src_binding is None or not src_binding.alive:
            return
        ok = (
            dst in self.bindings
            and dst not in self._down
            and dst not in self._muted
            and src not in self._down
            and self.link_up(src, dst)
        )
        if not ok:
            src_binding.actor.on_connection_failed(dst)
            return
        pair = frozenset((src, dst))
        if pair not in self._connections:
            self._connections[pair] = None
            self.link_events.append(LinkEvent(self.queue.now, "open", *sorted(pair), "connect"))
        dst_binding = self.bindings[dst]
        if dst_binding.alive:
            dst_binding.actor.on_peer_connected(src, role)
        src_binding.actor.on_connection_established(dst)

    def _close_connection(self, pair: frozenset, reason: str, notify: tuple[str, ...]) -> None:
        if pair not in self._connections:
            return
        del self._connections[pair]
        a, b = sorted(pair)
        self.link_events.append(LinkEvent(self.queue.now, "close", a, b, reason))
        for node in notify:
            peer = b if node == a else a
            self.queue.push(
                self.queue.now + self.failure_detect_ms,
                lambda n=node, p=peer, pr=pair: self._notify_lost(n, p, pr),
            )

    def _notify_lost(self, node: str, peer: str, pair: frozenset) -> None:
        if pair in self._connections:
            return  # reconnected in the meantime; stale notice would drop the new link
        binding = self.bindings.get(node)
        if binding is not None and binding.alive:
            binding.actor.on_connection_lost(peer)

    # Faults.

    def crash(self, node_id: str) -> None:
        if node_id in self._down:
            return
        self._down.add(node_id)
        binding = self.bindings[node_id]
        binding.alive = False
        binding.incarnation += 1
        for pair in list(self._connections):
            if node_id in pair:
                (survivor,) = pair - {node_id}
                self._close_connection(pair, "crash", (survivor,))
        log.info("crash %s at %d ms", node_id, self.queue.now)

    def revive(self, node_id: str, actor) -> None:
        self._down.discard(node_id)
        binding = self.bindings[node_id]
        binding.actor = actor
        binding.alive = True
        binding.incarnation += 1
        log.info("revive %s at %d ms", node_id, self.queue.now)

    def partition(self, groups: list[list[str]]) -> None:
        for i, ga in enumerate(groups):
            for gb in groups[i + 1 :]:
                for a in ga:
                    for b in gb:
                        self._cut_pairs.add(frozenset((a, b)))
        for pair in list(self._connections):
            if pair in self._cut_pairs:
                self._close_connection(pair, "partition", tuple(sorted(pair)))
        log.info("partition applied at %d ms (%d cut pairs)", self.queue.now, len(self._cut_pairs))

    def heal_partition(self) -> None:
        self._cut_pairs.clear()
        log.info("partition healed at %d ms", self.queue.now)

    def mute(self, node_id: str) -> None:
        self._muted.add(node_id)

    def unmute(self, node_id: str) -> None:
        self._muted.discard(node_id)

    # Authority-internal replication channel (not a public envelope kind).

    def sync(self, src: str, dst: str, deliver: Callable[[], None], size_bytes: int = 0) -> None:
        rec = Transmission(
            self.queue.now, src, dst, "AuthoritySync", size_bytes, "pending", self.role_of(src), self.role_of(dst)
        )
        self.transmissions.append(rec)
        if src in self._down or src in self._muted:
            rec.status = "sender_down"
            return
        if not self.link_up(src, dst):
            rec.status = "link_down"
            return

        def _arrive():
            if dst in self._down or dst in self._muted:
                rec.status = "dest_down"
                return
            rec.status = "delivered"
            rec.delivered_at_ms = self.queue.now
            deliver()

        self.queue.push(self.queue.now + self.default_link.latency_ms, _arrive)
