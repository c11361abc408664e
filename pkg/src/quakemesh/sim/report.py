"""Structured run report, the post-run audit, and canonical/CSV serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from quakemesh.canonical import canonical_text
from quakemesh.core import GeoLocation, haversine_distance
from quakemesh.node import AlertEvent
from quakemesh.protocol import GossipConfig
from quakemesh.sim.network import LinkEvent, Transmission

REPORT_SCHEMA = "quakemesh/report/v1"


def nearest_rank(values: list[int], fraction: float) -> int | None:
    """Nearest-rank percentile over a sorted copy; None for empty input."""
    if not values:
        return None
    ordered = sorted(values)
    rank = max(1, math.ceil(fraction * len(ordered)))
    return ordered[rank - 1]


@dataclass
class AuditResult:
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


@dataclass
class SimReport:
    """Everything observable about one seeded run."""

    scenario_name: str
    seed: int
    duration_ms: int
    nodes: list[dict]  # id, role, lat, lon
    alerts: list[AlertEvent]
    transmissions: list[Transmission]
    link_events: list[LinkEvent]
    eew_log: list[dict]  # authority, received_at_ms, reporter, origin, seq
    onsets: dict[str, int]
    counters: dict[str, dict]
    fault_log: list[dict]
    gossip: GossipConfig
    metrics: dict = field(default_factory=dict)
    audit_result: AuditResult = field(default_factory=AuditResult)

    def node_location(self, node_id: str) -> GeoLocation | None:
        for n in self.nodes:
            if n["id"] == node_id:
                return GeoLocation(n["lat"], n["lon"])
        return None

    def detector_ids(self) -> list[str]:
        return [n["id"] for n in self.nodes if n["role"] == "detector"]

    def alerted_nodes(self) -> set[str]:
        return {a.node_id for a in self.alerts}

    def alerts_for(self, origin: str, seq: int) -> list[AlertEvent]:
        return [a for a in self.alerts if a.message.message_id == (origin, seq)]

    def origins(self) -> set[tuple[str, int]]:
        return {tuple(a.message.message_id) for a in self.alerts}

    def links_at(self, t_ms: int) -> set[frozenset]:
        """Open peer/probe links at an instant, replayed from the event log."""
        open_links: set[frozenset] = set()
        for ev in self.link_events:
            if ev.t_ms > t_ms:
                break
            pair = frozenset((ev.a, ev.b))
            if ev.event == "open":
                open_links.add(pair)
            else:
                open_links.discard(pair)
        return open_links

    # Serialization.

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "scenario": self.scenario_name,
            "seed": self.seed,
            "duration_ms": self.duration_ms,
            "gossip": {
                "max_distance_km": self.gossip.max_distance_km,
                "max_hops": self.gossip.max_hops,
                "dedup_capacity": self.gossip.dedup_capacity,
            },
            "nodes": self.nodes,
            "metrics": self.metrics,
            "audit": {"passed": self.audit_result.passed, "violations": self.audit_result.violations},
            "alerts": [
                {
                    "node": a.node_id,
                    "origin": a.message.message_id.origin,
                    "seq": a.message.message_id.seq,
                    "kind": a.kind,
                    "raised_at_ms": a.raised_at_ms,
                    "detected_at_ms": a.message.timestamp_ms,
                    "latency_ms": a.raised_at_ms - a.message.timestamp_ms,
                }
                for a in self.alerts
            ],
            "onsets": dict(self.onsets),
            "eew_log": self.eew_log,
            "link_events": [
                {"t_ms": e.t_ms, "event": e.event, "a": e.a, "b": e.b, "reason": e.reason}
                for e in self.link_events
            ],
            "transmissions": [
                {
                    "t_ms": t.t_ms,
                    "src": t.src,
                    "dst": t.dst,
                    "kind": t.kind,
                    "size_bytes": t.size_bytes,
                    "status": t.status,
                    "src_role": t.src_role,
                    "dst_role": t.dst_role,
                    "delivered_at_ms": t.delivered_at_ms,
                    "eew_origin": t.eew_origin,
                    "eew_seq": t.eew_seq,
                    "hop_count": t.hop_count,
                }
                for t in self.transmissions
            ],
            "counters": self.counters,
            "fault_log": self.fault_log,
        }

    def serialize(self) -> str:
        return canonical_text(self.to_dict()) + "\n"

    def write(self, path: Path) -> None:
        path.write_text(self.serialize(), encoding="utf-8")

    def write_alerts_csv(self, path: Path) -> None:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "origin", "seq", "kind", "raised_at_ms", "detected_at_ms", "latency_ms"])
            for a in self.alerts:
                writer.writerow(
                    [
                        a.node_id,
                        a.message.message_id.origin,
                        a.message.message_id.seq,
                        a.kind,
                        a.raised_at_ms,
                        a.message.timestamp_ms,
                        a.raised_at_ms - a.message.timestamp_ms,
                    ]
                )

    def write_transmissions_csv(self, path: Path) -> None:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t_ms", "src", "dst", "kind", "size_bytes", "status", "src_role", "dst_role", "delivered_at_ms"]
            )
            for t in self.transmissions:
                writer.writerow(
                    [t.t_ms, t.src, t.dst, t.kind, t.size_bytes, t.status, t.src_role, t.dst_role, t.delivered_at_ms]
                )


def load_report(path: Path) -> dict:
    """Reports are canonical text and parse as plain JSON."""
    return json.loads(Path(path).read_text(encoding="utf-8"))


def audit(report: SimReport) -> AuditResult:
    """Post-run verification of the privacy, dedup, range and hop rules.

    Violations are returned, never raised: a failing audit is a result.
    """
    result = AuditResult()

    # Raw samples may only travel probe -> detector.
    for t in report.transmissions:
        if t.kind in ("SampleBatch", "ProbeHello"):
            if t.src_role != "probe" or t.dst_role != "detector":
                result.violations.append(
                    f"privacy: {t.kind} on {t.src_role}->{t.dst_role} link {t.src}->{t.dst} at {t.t_ms} ms"
                )

    # At most one alert per (node, message).
    seen_alerts: dict[tuple, int] = {}
    for a in report.alerts:
        key = (a.node_id, a.message.message_id)
        seen_alerts[key] = seen_alerts.get(key, 0) + 1
    for (node, mid), count in seen_alerts.items():
        if count > 1:
            result.violations.append(f"dedup: {count} alerts on {node} for message {mid}")

    # Relaying is bounded by distance from the origin and by the hop TTL.
    eew_sends = [t for t in report.transmissions if t.kind == "Eew"]
    for t in eew_sends:
        src_loc = report.node_location(t.src)
        if src_loc is not None and t.origin_lat is not None:
            origin_loc = GeoLocation(t.origin_lat, t.origin_lon)
            if haversine_distance(src_loc, origin_loc) > report.gossip.max_distance_km + 1e-9:
                result.violations.append(
                    f"range: {t.src} relayed {t.eew_origin}#{t.eew_seq} beyond "
                    f"{report.gossip.max_distance_km} km at {t.t_ms} ms"
                )
        if t.hop_count is not None and t.hop_count > report.gossip.max_hops:
            result.violations.append(f"hops: {t.src} sent hop_count {t.hop_count} at {t.t_ms} ms")

    # One relay burst per (node, message): all its sends share one timestamp.
    send_times: dict[tuple, set[int]] = {}
    for t in eew_sends:
        send_times.setdefault((t.src, t.eew_origin, t.eew_seq), set()).add(t.t_ms)
    duplicate_relays = 0
    for (src, origin, seq), times in send_times.items():
        if len(times) > 1:
            duplicate_relays += len(times) - 1
            result.violations.append(f"relay: {src} relayed message {origin}#{seq} {len(times)} times")

    # Hop counts grow by exactly one at each relay.
    first_hop_in: dict[tuple, int] = {}
    for t in eew_sends:
        if t.status == "delivered":
            key = (t.dst, t.eew_origin, t.eew_seq)
            if key not in first_hop_in:
                first_hop_in[key] = t.hop_count
    for t in eew_sends:
        key = (t.src, t.eew_origin, t.eew_seq)
        if t.src == t.eew_origin:
            continue
        got = first_hop_in.get(key)
        if got is not None and t.hop_count != got + 1:
            result.violations.append(
                f"hops: {t.src} relayed {t.eew_origin}#{t.eew_seq} at hop {t.hop_count}, received at {got}"
            )

    report.metrics["duplicate_relays"] = duplicate_relays
    report.metrics["privacy_violations"] = sum(1 for v in result.violations if v.startswith("privacy:"))
    return result


def compute_metrics(report: SimReport) -> None:
    detectors = report.detector_ids()
    alerted = {a.node_id for a in report.alerts}
    remote_latencies = [
        a.raised_at_ms - a.message.timestamp_ms for a in report.alerts if a.kind == "remote_gossip"
    ]
    delivered = sum(1 for t in report.transmissions if t.status == "delivered")
    report.metrics.update(
        {
            "detector_count": len(detectors),
            "alerted_detectors": len(alerted & set(detectors)),
            "coverage": (len(alerted & set(detectors)) / len(detectors)) if detectors else 0.0,
            "alert_count": len(report.alerts),
            "remote_alert_count": len(remote_latencies),
            "latency_median_ms": nearest_rank(remote_latencies, 0.5),
            "latency_p95_ms": nearest_rank(remote_latencies, 0.95),
            "transmissions": len(report.transmissions),
            "delivered": delivered,
        }
    )
