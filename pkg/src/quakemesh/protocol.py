"""Wire messages, framing codec, and the distance-bounded gossip rule.

Frame layout: a 4-byte big-endian unsigned length prefix followed by a
UTF-8 body. The body is canonical text with fixed key order
(kind, sender, seq, payload); equal envelopes always encode to identical
bytes. Sample rows serialize as [timestamp_ms, x, y, z] with at most
9 significant digits per component.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import NamedTuple

from quakemesh.canonical import canonical_text
from quakemesh.core import AccelSample, GeoLocation, NodeId, SignalWindow, haversine_distance

MAX_BODY_BYTES = 1 << 20

ENVELOPE_KINDS = (
    "ProbeHello",
    "SampleBatch",
    "Register",
    "RegisterAck",
    "ProbeQuery",
    "ProbeAssign",
    "Eew",
    "EewLog",
    "Ping",
    "Pong",
)


class EncodeError(Exception):
    pass


class PayloadTooLarge(EncodeError):
    pass


class DecodeError(Exception):
    pass


class TruncatedFrame(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


class MalformedBody(DecodeError):
    pass


class UnknownKind(DecodeError):
    pass


class MessageId(NamedTuple):
    """Origin node id plus an origin-local sequence number."""

    origin: NodeId
    seq: int


@dataclass(frozen=True)
class EEWMessage:
    """The gossiped warning record: detection time, origin, triggering signal."""

    message_id: MessageId
    timestamp_ms: int
    origin_location: GeoLocation
    signal_window: SignalWindow
    hop_count: int

    def __post_init__(self):
        if self.hop_count < 0:
            raise ValueError("hop_count must be non-negative")

    def forwarded(self) -> "EEWMessage":
        """Copy for relaying: identity untouched, hop count bumped by one."""
        return EEWMessage(
            self.message_id,
            self.timestamp_ms,
            self.origin_location,
            self.signal_window,
            self.hop_count + 1,
        )


@dataclass(frozen=True)
class Neighbor:
    node_id: NodeId
    endpoint: str
    location: GeoLocation


@dataclass(frozen=True)
class GossipConfig:
    max_distance_km: float = 100.0
    max_hops: int = 16
    dedup_capacity: int = 4096

    def __post_init__(self):
        if self.max_distance_km <= 0 or self.max_hops <= 0 or self.dedup_capacity <= 0:
            raise ValueError("all gossip parameters must be positive")


# Envelope payload bodies, one class per kind.


@dataclass(frozen=True)
class ProbeHello:
    location: GeoLocation


@dataclass(frozen=True)
class SampleBatch:
    samples: tuple[AccelSample, ...]


@dataclass(frozen=True)
class Register:
    location: GeoLocation
    endpoint: str
    ttl_ms: int


@dataclass(frozen=True)
class RegisterAck:
    neighbors: tuple[Neighbor, ...]


@dataclass(frozen=True)
class ProbeQuery:
    location: GeoLocation
    exclude: tuple[NodeId, ...] = ()


@dataclass(frozen=True)
class ProbeAssign:
    detector: Neighbor | None


@dataclass(frozen=True)
class Eew:
    message: EEWMessage


@dataclass(frozen=True)
class EewLog:
    message: EEWMessage


@dataclass(frozen=True)
class Ping:
    pass


@dataclass(frozen=True)
class Pong:
    pass


_KIND_BY_TYPE = {
    ProbeHello: "ProbeHello",
    SampleBatch: "SampleBatch",
    Register: "Register",
    RegisterAck: "RegisterAck",
    ProbeQuery: "ProbeQuery",
    ProbeAssign: "ProbeAssign",
    Eew: "Eew",
    EewLog: "EewLog",
    Ping: "Ping",
    Pong: "Pong",
}


@dataclass(frozen=True)
class Envelope:
    sender: NodeId
    seq: int
    payload: object

    def __post_init__(self):
        if not self.sender:
            raise ValueError("sender must be non-empty")
        if self.seq < 0:
            raise ValueError("seq must be non-negative")
        if type(self.payload) not in _KIND_BY_TYPE:
            raise ValueError(f"unsupported payload type {type(self.payload).__name__}")

    @property
    def kind(self) -> str:
        return _KIND_BY_TYPE[type(self.payload)]


def _location_obj(loc: GeoLocation) -> list:
    return [loc.latitude_deg, loc.longitude_deg]


def _sample_obj(s: AccelSample) -> list:
    return [s.timestamp_ms, s.x, s.y, s.z]


def _neighbor_obj(n: Neighbor) -> list:
    return [n.node_id, n.endpoint, _location_obj(n.location)]


def _window_obj(w: SignalWindow) -> dict:
    return {
        "probe_id": w.probe_id,
        "window_start_ms": w.window_start_ms,
        "window_end_ms": w.window_end_ms,
        "samples": [_sample_obj(s) for s in w.samples],
    }


def _message_obj(m: EEWMessage) -> dict:
    return {
        "message_id": [m.message_id.origin, m.message_id.seq],
        "timestamp_ms": m.timestamp_ms,
        "origin_location": _location_obj(m.origin_location),
        "signal_window": _window_obj(m.signal_window),
        "hop_count": m.hop_count,
    }


def _payload_obj(payload) -> dict:
    if isinstance(payload, ProbeHello):
        return {"location": _location_obj(payload.location)}
    if isinstance(payload, SampleBatch):
        return {"samples": [_sample_obj(s) for s in payload.samples]}
    if isinstance(payload, Register):
        return {
            "location": _location_obj(payload.location),
            "endpoint": payload.endpoint,
            "ttl_ms": payload.ttl_ms,
        }
    if isinstance(payload, RegisterAck):
        return {"neighbors": [_neighbor_obj(n) for n in payload.neighbors]}
    if isinstance(payload, ProbeQuery):
        return {"location": _location_obj(payload.location), "exclude": list(payload.exclude)}
    if isinstance(payload, ProbeAssign):
        det = payload.detector
        return {"detector": None if det is None else _neighbor_obj(det)}
    if isinstance(payload, (Eew, EewLog)):
        return {"message": _message_obj(payload.message)}
    return {}


def envelope_body(env: Envelope) -> dict:
    return {"kind": env.kind, "sender": env.sender, "seq": env.seq, "payload": _payload_obj(env.payload)}


def encode(env: Envelope) -> bytes:
    """Frame an envelope: length prefix plus canonical UTF-8 body."""
    body = canonical_text(envelope_body(env)).encode("utf-8")
    if len(body) > MAX_BODY_BYTES:
        raise PayloadTooLarge(f"body of {len(body)} bytes exceeds {MAX_BODY_BYTES}")
    return struct.pack(">I", len(body)) + body


def _reject_constant(_):
    raise ValueError("non-finite JSON constants are not accepted")


class _Field:
    """Typed accessors over a decoded payload object; every misfit is MalformedBody."""

    def __init__(self, obj, kind: str):
        if not isinstance(obj, dict):
            raise MalformedBody(f"{kind} payload must be an object")
        self.obj = obj
        self.kind = kind

    def _get(self, name: str):
        if name not in self.obj:
            raise MalformedBody(f"{self.kind} payload missing field {name!r}")
        return self.obj[name]

    def string(self, name: str) -> str:
        v = self._get(name)
        if not isinstance(v, str):
            raise MalformedBody(f"{self.kind}.{name} must be a string")
        return v

    def integer(self, name: str) -> int:
        v = self._get(name)
        if type(v) is not int:
            raise MalformedBody(f"{self.kind}.{name} must be an integer")
        return v

    def array(self, name: str) -> list:
        v = self._get(name)
        if not isinstance(v, list):
            raise MalformedBody(f"{self.kind}.{name} must be an array")
        return v


def _as_float(v, where: str) -> float:
    if type(v) not in (int, float):
        raise MalformedBody(f"{where} must be a number")
    return float(v)


def _parse_location(v, where: str) -> GeoLocation:
    if not isinstance(v, list) or len(v) != 2:
        raise MalformedBody(f"{where} must be a [lat, lon] pair")
    try:
        return GeoLocation(_as_float(v[0], where), _as_float(v[1], where))
    except ValueError as exc:
        raise MalformedBody(f"{where}: {exc}") from exc


def _parse_sample(v, where: str) -> AccelSample:
    if not isinstance(v, list) or len(v) != 4:
        raise MalformedBody(f"{where} must be a [timestamp_ms, x, y, z] row")
    if type(v[0]) is not int:
        raise MalformedBody(f"{where} timestamp must be an integer")
    try:
        return AccelSample(v[0], _as_float(v[1], where), _as_float(v[2], where), _as_float(v[3], where))
    except ValueError as exc:
        raise MalformedBody(f"{where}: {exc}") from exc


def _parse_neighbor(v, where: str) -> Neighbor:
    if not isinstance(v, list) or len(v) != 3:
        raise MalformedBody(f"{where} must be a [node_id, endpoint, location] triple")
    if not isinstance(v[0], str) or not v[0] or not isinstance(v[1], str):
        raise MalformedBody(f"{where} node_id/endpoint must be strings")
    return Neighbor(v[0], v[1], _parse_location(v[2], f"{where} location"))


def _parse_window(v, where: str) -> SignalWindow:
    f = _Field(v, where)
    samples = tuple(_parse_sample(s, f"{where} sample") for s in f.array("samples"))
    try:
        return SignalWindow(samples, f.string("probe_id"), f.integer("window_start_ms"), f.integer("window_end_ms"))
    except ValueError as exc:
        raise MalformedBody(f"{where}: {exc}") from exc


def _parse_message(v, where: str) -> EEWMessage:
    f = _Field(v, where)
    mid = f.array("message_id")
    if len(mid) != 2 or not isinstance(mid[0], str) or not mid[0] or type(mid[1]) is not int:
        raise MalformedBody(f"{where}.message_id must be [origin, seq]")
    hop = f.integer("hop_count")
    try:
        return EEWMessage(
            MessageId(mid[0], mid[1]),
            f.integer("timestamp_ms"),
            _parse_location(f._get("origin_location"), f"{where}.origin_location"),
            _parse_window(f._get("signal_window"), f"{where}.signal_window"),
            hop,
        )
    except ValueError as exc:
        raise MalformedBody(f"{where}: {exc}") from exc


def _parse_payload(kind: str, obj):
    f = _Field(obj, kind)
    if kind == "ProbeHello":
        return ProbeHello(_parse_location(f._get("location"), "ProbeHello.location"))
    if kind == "SampleBatch":
        return SampleBatch(tuple(_parse_sample(s, "SampleBatch sample") for s in f.array("samples")))
    if kind == "Register":
        return Register(
            _parse_location(f._get("location"), "Register.location"),
            f.string("endpoint"),
            f.integer("ttl_ms"),
        )
    if kind == "RegisterAck":
        return RegisterAck(tuple(_parse_neighbor(n, "RegisterAck neighbor") for n in f.array("neighbors")))
    if kind == "ProbeQuery":
        exclude = f.array("exclude")
        if not all(isinstance(e, str) and e for e in exclude):
            raise MalformedBody("ProbeQuery.exclude must hold non-empty strings")
        return ProbeQuery(_parse_location(f._get("location"), "ProbeQuery.location"), tuple(exclude))
    if kind == "ProbeAssign":
        det = f._get("detector")
        return ProbeAssign(None if det is None else _parse_neighbor(det, "ProbeAssign.detector"))
    if kind == "Eew":
        return Eew(_parse_message(f._get("message"), "Eew.message"))
    if kind == "EewLog":
        return EewLog(_parse_message(f._get("message"), "EewLog.message"))
    if obj != {}:
        raise MalformedBody(f"{kind} payload must be empty")
    return Ping() if kind == "Ping" else Pong()


def decode(data: bytes) -> Envelope:
    """Parse one exact frame; hostile input yields a typed DecodeError, never a crash."""
    if len(data) < 4:
        raise TruncatedFrame(f"need 4 header bytes, got {len(data)}")
    (declared,) = struct.unpack(">I", data[:4])
    if len(data) < 4 + declared:
        raise TruncatedFrame(f"declared {declared} body bytes, got {len(data) - 4}")
    if len(data) > 4 + declared:
        raise LengthMismatch(f"{len(data) - 4 - declared} trailing bytes beyond declared length")
    try:
        text = data[4 : 4 + declared].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedBody(f"body is not valid UTF-8: {exc}") from exc
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except (ValueError, RecursionError) as exc:
        raise MalformedBody(f"body is not a valid object: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) != {"kind", "sender", "seq", "payload"}:
        raise MalformedBody("body must hold exactly kind, sender, seq, payload")
    kind = obj["kind"]
    if not isinstance(kind, str):
        raise MalformedBody("kind must be a string")
    if kind not in ENVELOPE_KINDS:
        raise UnknownKind(f"unknown envelope kind {kind!r}")
    sender = obj["sender"]
    if not isinstance(sender, str) or not sender:
        raise MalformedBody("sender must be a non-empty string")
    seq = obj["seq"]
    if type(seq) is not int or seq < 0:
        raise MalformedBody("seq must be a non-negative integer")
    return Envelope(sender, seq, _parse_payload(kind, obj["payload"]))


class SeenSet:
    """FIFO-bounded set of message ids already considered for relaying."""

    def __init__(self, capacity: int = 4096):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._ids: dict[MessageId, None] = {}

    def __contains__(self, message_id: MessageId) -> bool:
        return message_id in self._ids

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, message_id: MessageId) -> None:
        if message_id in self._ids:
            return
        if len(self._ids) >= self.capacity:
            oldest = next(iter(self._ids))
            del self._ids[oldest]
        self._ids[message_id] = None


def record_seen(seen: SeenSet, message_id: MessageId) -> SeenSet:
    seen.add(message_id)
    return seen


def should_forward(
    msg: EEWMessage,
    self_location: GeoLocation,
    seen: SeenSet,
    cfg: GossipConfig,
) -> bool:
    """Relay-side gossip rule; evaluating it marks the message as seen.

    A node outside the propagation radius still consumes (and may alert on)
    the message; only relaying is suppressed.
    """
    unseen = msg.message_id not in seen
    seen.add(msg.message_id)
    if not unseen:
        return False
    if msg.hop_count >= cfg.max_hops:
        return False
    return haversine_distance(self_location, msg.origin_location) <= cfg.max_distance_km
