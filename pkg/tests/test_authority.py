from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from conftest import DEG_PER_10KM
from quakemesh.authority import (
    AuthoritySnapshot,
    DetectorRecord,
    EewLogEntry,
    LocalAuthority,
    merge_logs,
    merge_registries,
    parse_log_line,
    parse_registry_line,
)
from quakemesh.core import AccelSample, GeoLocation, SignalWindow, haversine_distance
from quakemesh.protocol import EEWMessage, MessageId

DEG_PER_KM = DEG_PER_10KM / 10.0


def record(node_id, km_east=0.0, at_ms=0, ttl_ms=90_000):
    return DetectorRecord(node_id, GeoLocation(0.0, km_east * DEG_PER_KM), node_id, at_ms, ttl_ms)


def eew(origin="d1", seq=0):
    window = SignalWindow((AccelSample(0, 0.0, 0.0, 1.0),), "p1", 0, 10)
    return EEWMessage(MessageId(origin, seq), 0, GeoLocation(0, 0), window, 0)


class TestRegistration:
    def test_first_registrant_gets_empty_list(self):
        auth = LocalAuthority()
        assert auth.register_detector(record("d1"), k=4) == []

    def test_line_of_five_middle_gets_adjacent_two(self):
        # Centering at 0 km makes the +-1 km offsets exact float negations,
        # so the adjacent pair is a true tie resolved by node id.
        auth = LocalAuthority()
        positions = {f"d{i}": float(i - 2) for i in range(5)}
        for nid, km in positions.items():
            auth.register_detector(record(nid, km), k=4)
        neighbors = auth.register_detector(record("d2", 0.0), k=2)
        # Brute-force oracle over all candidate pairs.
        me = GeoLocation(0.0, 0.0)
        expect = sorted(
            (nid for nid in positions if nid != "d2"),
            key=lambda nid: (haversine_distance(me, GeoLocation(0.0, positions[nid] * DEG_PER_KM)), nid),
        )[:2]
        assert [n.node_id for n in neighbors] == expect == ["d1", "d3"]

    def test_neighbor_list_sorted_and_capped(self):
        auth = LocalAuthority()
        for i in range(6):
            auth.register_detector(record(f"d{i}", float(i)), k=4)
        neighbors = auth.register_detector(record("d0", 0.0), k=4)
        assert [n.node_id for n in neighbors] == ["d1", "d2", "d3", "d4"]

    def test_expired_record_never_listed(self):
        auth = LocalAuthority()
        auth.register_detector(record("old", 1.0, at_ms=0, ttl_ms=1000), k=4)
        neighbors = auth.register_detector(record("new", 0.0, at_ms=5000), k=4)
        assert neighbors == []

    def test_reregistration_refreshes_lease(self):
        auth = LocalAuthority()
        auth.register_detector(record("d1", 1.0, at_ms=0, ttl_ms=1000), k=4)
        auth.register_detector(record("d1", 1.0, at_ms=900, ttl_ms=1000), k=4)
        assert auth.expire_leases(1500) == 0


class TestAssignProbe:
    def test_empty_registry_returns_none(self):
        assert LocalAuthority().assign_probe(GeoLocation(0, 0), now_ms=0) is None

    def test_nearest_detector_wins(self):
        auth = LocalAuthority()
        auth.register_detector(record("far", 5.0), k=4)
        auth.register_detector(record("near", 1.0), k=4)
        chosen = auth.assign_probe(GeoLocation(0, 0), now_ms=0)
        assert chosen.node_id == "near"

    def test_distance_tie_breaks_lexicographically(self):
        auth = LocalAuthority()
        auth.register_detector(record("db", 1.0), k=4)
        auth.register_detector(record("da", -1.0), k=4)
        chosen = auth.assign_probe(GeoLocation(0, 0), now_ms=0)
        assert chosen.node_id == "da"

    def test_exclude_hint_skips_dead_detector(self):
        auth = LocalAuthority()
        auth.register_detector(record("near", 1.0), k=4)
        auth.register_detector(record("next", 2.0), k=4)
        chosen = auth.assign_probe(GeoLocation(0, 0), now_ms=0, exclude=("near",))
        assert chosen.node_id == "next"

    def test_exclude_of_everything_falls_back(self):
        auth = LocalAuthority()
        auth.register_detector(record("only", 1.0), k=4)
        chosen = auth.assign_probe(GeoLocation(0, 0), now_ms=0, exclude=("only",))
        assert chosen.node_id == "only"

    def test_expired_record_not_assignable(self):
        auth = LocalAuthority()
        auth.register_detector(record("d1", 1.0, at_ms=0, ttl_ms=1000), k=4)
        assert auth.assign_probe(GeoLocation(0, 0), now_ms=5000) is None


class TestEewLog:
    def test_same_message_from_three_reporters_kept(self):
        auth = LocalAuthority()
        for i, reporter in enumerate(("d1", "d2", "d3")):
            auth.log_eew(EewLogEntry(1000 + i, eew("d1", 0), reporter))
        entries = auth.log_entries()
        assert len(entries) == 3
        assert {e.reporter for e in entries} == {"d1", "d2", "d3"}

    def test_time_range_query_in_received_order(self):
        auth = LocalAuthority()
        for t in (100, 200, 300, 400):
            auth.log_eew(EewLogEntry(t, eew("d1", t), "d1"))
        ranged = auth.log_entries(start_ms=150, end_ms=400)
        assert [e.received_at_ms for e in ranged] == [200, 300]


class TestExpireLeases:
    def test_nothing_expired(self):
        auth = LocalAuthority()
        auth.register_detector(record("d1", ttl_ms=90_000), k=4)
        assert auth.expire_leases(50_000) == 0

    def test_refresher_survives_ten_minutes(self):
        auth = LocalAuthority()
        for t in range(0, 600_001, 30_000):
            auth.register_detector(record("d1", at_ms=t, ttl_ms=90_000), k=4)
            assert auth.expire_leases(t) == 0

    def test_lapsed_record_evicted(self):
        auth = LocalAuthority()
        auth.register_detector(record("d1", ttl_ms=1000), k=4)
        assert auth.expire_leases(2000) == 1
        assert auth.assign_probe(GeoLocation(0, 0), now_ms=2000) is None


records_st = st.builds(
    record,
    node_id=st.sampled_from(["a", "b", "c", "d", "e"]),
    km_east=st.floats(min_value=-5, max_value=5, allow_nan=False),
    at_ms=st.integers(min_value=0, max_value=10_000),
    ttl_ms=st.integers(min_value=1, max_value=100_000),
)
log_st = st.builds(
    EewLogEntry,
    received_at_ms=st.integers(min_value=0, max_value=10_000),
    message=st.tuples(st.sampled_from(["a", "b"]), st.integers(0, 3)).map(lambda t: eew(*t)),
    reporter=st.sampled_from(["a", "b", "c"]),
)
snapshots = st.builds(
    AuthoritySnapshot,
    records=st.lists(records_st, max_size=6).map(tuple),
    log=st.lists(log_st, max_size=6).map(tuple),
)


class TestReplication:
    def test_merge_with_self_is_identity(self):
        auth = LocalAuthority()
        auth.register_detector(record("d1", 1.0, at_ms=10), k=4)
        auth.log_eew(EewLogEntry(5, eew(), "d1"))
        before = auth.snapshot()
        auth.replicate(before)
        after = auth.snapshot()
        assert set(after.records) == set(before.records)
        assert list(after.log) == list(before.log)

    def test_record_in_one_replica_spreads(self):
        a, b = LocalAuthority(), LocalAuthority()
        a.register_detector(record("d1", 1.0), k=4)
        b.replicate(a.snapshot())
        assert b.assign_probe(GeoLocation(0, 0), now_ms=0).node_id == "d1"

    def test_newer_registration_wins(self):
        a, b = LocalAuthority(), LocalAuthority()
        a.register_detector(record("d1", 1.0, at_ms=100), k=4)
        b.register_detector(record("d1", 2.0, at_ms=200), k=4)
        a.replicate(b.snapshot())
        assert a.snapshot().records[0].registered_at_ms == 200

    @given(snapshots, snapshots)
    @settings(max_examples=100, deadline=None)
    def test_merge_commutative(self, s1, s2):
        ab = merge_registries(s1.records, s2.records)
        ba = merge_registries(s2.records, s1.records)
        assert ab == ba
        assert merge_logs(s1.log, s2.log) == merge_logs(s2.log, s1.log)

    @given(snapshots, snapshots, snapshots)
    @settings(max_examples=100, deadline=None)
    def test_merge_associative_and_idempotent_fixed_point(self, s1, s2, s3):
        left = merge_registries(merge_registries(s1.records, s2.records).values(), s3.records)
        right = merge_registries(s1.records, merge_registries(s2.records, s3.records).values())
        assert left == right
        again = merge_registries(left.values(), left.values())
        assert again == left
        merged_logs = merge_logs(merge_logs(s1.log, s2.log), s3.log)
        assert merge_logs(merged_logs, merged_logs) == merged_logs


class TestPersistence:
    def test_registry_lines_roundtrip(self):
        auth = LocalAuthority()
        auth.register_detector(record("d1", 1.25, at_ms=42), k=4)
        lines = auth.dump_registry_lines()
        assert len(lines) == 1
        parsed = parse_registry_line(lines[0])
        assert parsed.node_id == "d1"
        assert parsed.registered_at_ms == 42

    def test_log_lines_roundtrip(self):
        auth = LocalAuthority()
        auth.log_eew(EewLogEntry(77, eew("d9", 3), "d2"))
        parsed = parse_log_line(auth.dump_log_lines()[0])
        assert parsed.reporter == "d2"
        assert parsed.message.message_id == ("d9", 3)
