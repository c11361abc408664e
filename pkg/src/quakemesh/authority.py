"""Local-authority service: registration, neighbor discovery, warning log.

The service is deliberately soft-state: records expire unless refreshed,
probes are never stored, and replicas converge by exchanging full
snapshots merged last-writer-wins.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

from quakemesh.canonical import canonical_text
from quakemesh.core import GeoLocation, NodeId, haversine_distance
from quakemesh.protocol import EEWMessage, MessageId, Neighbor, _message_obj, _parse_message

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorRecord:
    node_id: NodeId
    location: GeoLocation
    endpoint: str
    registered_at_ms: int
    ttl_ms: int

    def __post_init__(self):
        if not self.node_id:
            raise ValueError("node_id must be non-empty")
        if self.ttl_ms <= 0:
            raise ValueError("ttl_ms must be positive")

    def expired(self, now_ms: int) -> bool:
        return now_ms > self.registered_at_ms + self.ttl_ms


@dataclass(frozen=True)
class EewLogEntry:
    received_at_ms: int
    message: EEWMessage
    reporter: NodeId


@dataclass(frozen=True)
class AuthoritySnapshot:
    records: tuple[DetectorRecord, ...]
    log: tuple[EewLogEntry, ...]


def _lww_key(rec: DetectorRecord):
    return (
        rec.registered_at_ms,
        rec.ttl_ms,
        rec.endpoint,
        rec.location.latitude_deg,
        rec.location.longitude_deg,
    )


def merge_registries(a, b) -> dict[NodeId, DetectorRecord]:
    """Per-node last-writer-wins merge on registered_at_ms (field tuple breaks ties)."""
    merged: dict[NodeId, DetectorRecord] = {}
    for rec in list(a) + list(b):
        prior = merged.get(rec.node_id)
        if prior is None or _lww_key(rec) > _lww_key(prior):
            merged[rec.node_id] = rec
    return {nid: merged[nid] for nid in sorted(merged)}


def merge_logs(a, b) -> list[EewLogEntry]:
    """Set union keyed by (message_id, reporter); earliest receipt wins."""
    merged: dict[tuple[MessageId, NodeId], EewLogEntry] = {}
    for entry in list(a) + list(b):
        key = (entry.message.message_id, entry.reporter)
        prior = merged.get(key)
        if prior is None or entry.received_at_ms < prior.received_at_ms:
            merged[key] = entry
    return sorted(merged.values(), key=lambda e: (e.received_at_ms, e.reporter, e.message.message_id))


class LocalAuthority:
    """Registry plus append-only warning log for one authority replica."""

    def __init__(self):
        self._registry: dict[NodeId, DetectorRecord] = {}
        self._log: list[EewLogEntry] = []

    def _live_records(self, now_ms: int) -> list[DetectorRecord]:
        return [r for r in self._registry.values() if not r.expired(now_ms)]

    def register_detector(self, rec: DetectorRecord, k: int) -> list[Neighbor]:
        """Store or refresh the record, then return its k nearest live peers."""
        self._registry[rec.node_id] = rec
        now = rec.registered_at_ms
        candidates = [r for r in self._live_records(now) if r.node_id != rec.node_id]
        candidates.sort(key=lambda r: (haversine_distance(rec.location, r.location), r.node_id))
        return [Neighbor(r.node_id, r.endpoint, r.location) for r in candidates[:k]]

    def assign_probe(
        self,
        probe_location: GeoLocation,
        now_ms: int,
        exclude: tuple[NodeId, ...] = (),
    ) -> Neighbor | None:
        """Nearest live detector, or None when the registry has nothing usable.

        Probes never register, so this is read-only. The exclude hint lets a
        probe skip a detector it just failed to reach; if excluding empties
        the candidate set the hint is ignored rather than stranding the probe.
        """
        live = self._live_records(now_ms)
        candidates = [r for r in live if r.node_id not in exclude] or live
        if not candidates:
            return None
        best = min(candidates, key=lambda r: (haversine_distance(probe_location, r.location), r.node_id))
        return Neighbor(best.node_id, best.endpoint, best.location)

    def log_eew(self, entry: EewLogEntry) -> None:
        self._log.append(entry)

    def log_entries(self, start_ms: int | None = None, end_ms: int | None = None) -> list[EewLogEntry]:
        out = self._log
        if start_ms is not None:
            out = [e for e in out if e.received_at_ms >= start_ms]
        if end_ms is not None:
            out = [e for e in out if e.received_at_ms < end_ms]
        return list(out)

    def expire_leases(self, now_ms: int) -> int:
        dead = [nid for nid, rec in self._registry.items() if rec.expired(now_ms)]
        for nid in dead:
            del self._registry[nid]
        if dead:
            log.debug("expired %d detector leases: %s", len(dead), dead)
        return len(dead)

    def snapshot(self) -> AuthoritySnapshot:
        return AuthoritySnapshot(tuple(self._registry.values()), tuple(self._log))

    def replicate(self, peer_state: AuthoritySnapshot) -> None:
        """Merge a peer replica's full snapshot into this one."""
        self._registry = merge_registries(self._registry.values(), peer_state.records)
        self._log = merge_logs(self._log, peer_state.log)

    # Line-delimited persistence for post-run inspection.

    def dump_registry_lines(self) -> list[str]:
        lines = []
        for rec in sorted(self._registry.values(), key=lambda r: r.node_id):
            lines.append(
                canonical_text(
                    {
                        "node_id": rec.node_id,
                        "location": [rec.location.latitude_deg, rec.location.longitude_deg],
                        "endpoint": rec.endpoint,
                        "registered_at_ms": rec.registered_at_ms,
                        "ttl_ms": rec.ttl_ms,
                    }
                )
            )
        return lines

    def dump_log_lines(self) -> list[str]:
        return [
            canonical_text(
                {
                    "received_at_ms": e.received_at_ms,
                    "reporter": e.reporter,
                    "message": _message_obj(e.message),
                }
            )
            for e in self._log
        ]


def parse_registry_line(line: str) -> DetectorRecord:
    obj = json.loads(line)
    return DetectorRecord(
        obj["node_id"],
        GeoLocation(obj["location"][0], obj["location"][1]),
        obj["endpoint"],
        obj["registered_at_ms"],
        obj["ttl_ms"],
    )


def parse_log_line(line: str) -> EewLogEntry:
    obj = json.loads(line)
    return EewLogEntry(obj["received_at_ms"], _parse_message(obj["message"], "log message"), obj["reporter"])
