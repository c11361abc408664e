from __future__ import annotations

import pytest

from conftest import DEG_PER_10KM
from quakemesh.core import GeoLocation
from quakemesh.detection import DetectorParams
from quakemesh.scenario import AuthoritySettings, FaultAction
from quakemesh.sim import QuakeSource, Simulation

DEG_PER_KM = DEG_PER_10KM / 10.0


def loc(km_east: float, km_north: float = 0.0) -> GeoLocation:
    return GeoLocation(km_north * DEG_PER_KM, km_east * DEG_PER_KM)


def quiet_sim(seed=1, **kwargs) -> Simulation:
    kwargs.setdefault("detection", DetectorParams(threshold_z=6.0))
    return Simulation(seed, **kwargs)


class TestDetectorBootstrap:
    def test_second_detector_gives_both_ends_one_link(self):
        sim = quiet_sim()
        d1 = sim.add_detector("d1", loc(0))
        d2 = sim.add_detector("d2", loc(10))
        sim.run(5000)
        assert set(d1.neighbors) == {"d2"}
        assert set(d2.neighbors) == {"d1"}
        assert sim.net.connections() == [frozenset({"d1", "d2"})]

    def test_authority_down_at_boot_leaves_node_alive_and_retrying(self):
        sim = quiet_sim()
        d1 = sim.add_detector("d1", loc(0))
        sim.add_probe("p1", loc(0), pinned_detector="d1")
        sim.add_quake(QuakeSource(loc(0), 10_000, 0.05))
        sim.schedule_fault(FaultAction(0, "authority_down"))
        report = sim.run(15_000)
        assert not d1.registered
        registers = [t for t in report.transmissions if t.kind == "Register"]
        assert len(registers) >= 3  # backoff retries kept going
        # The isolated node still serves its probe and raises the local alarm.
        assert [a.kind for a in report.alerts] == ["local_detection"]

    def test_changed_neighbor_list_adds_links_and_keeps_stale_ones(self):
        sim = quiet_sim(authority=AuthoritySettings(k=1))
        d1 = sim.add_detector("d1", loc(0))
        sim.add_detector("d2", loc(1.0))
        sim.add_detector("d3", loc(0.5), start_at_ms=35_000)
        sim.run(62_000)
        # After d1's 60 s re-registration its k=1 list is [d3], yet the old
        # d2 link stays up until transport failure.
        assert set(d1.neighbors) == {"d2", "d3"}

    def test_detector_registers_with_own_location(self):
        sim = quiet_sim()
        sim.add_detector("d1", loc(3.0))
        sim.run(2000)
        snapshot = sim.authorities["authority"].state.snapshot()
        assert snapshot.records[0].node_id == "d1"
        # Stored coordinates passed through the wire's 9-significant-digit rule.
        assert snapshot.records[0].location.longitude_deg == pytest.approx(
            loc(3.0).longitude_deg, rel=1e-8
        )


class TestOrigination:
    def _burst_sim(self):
        sim = quiet_sim()
        sim.add_detector("d1", loc(0))
        sim.add_detector("d2", loc(10))
        sim.add_detector("d3", loc(-10))
        sim.add_detector("d4", loc(0, 10))
        sim.add_probe("p1", loc(0))
        sim.add_quake(QuakeSource(loc(0), 20_000, 0.05))
        return sim

    def test_origination_fans_out_to_three_peers_and_authority(self):
        sim = self._burst_sim()
        report = sim.run(30_000)
        local = [a for a in report.alerts if a.kind == "local_detection"]
        assert len(local) == 1 and local[0].node_id == "d1"
        t0 = local[0].raised_at_ms
        eew_sends = [t for t in report.transmissions if t.kind == "Eew" and t.src == "d1" and t.t_ms == t0]
        log_sends = [t for t in report.transmissions if t.kind == "EewLog" and t.src == "d1" and t.t_ms == t0]
        assert len(eew_sends) == 3
        assert {t.dst for t in eew_sends} == {"d2", "d3", "d4"}
        assert len(log_sends) == 1

    def test_origin_location_is_detector_location(self):
        report = self._burst_sim().run(30_000)
        local = [a for a in report.alerts if a.kind == "local_detection"][0]
        assert local.message.origin_location == loc(0)
        assert local.message.hop_count == 0

    def test_second_quorum_success_suppressed_within_30s(self):
        sim = self._burst_sim()
        report = sim.run(30_000)
        d1 = sim.net.bindings["d1"].actor
        # The 5 s burst trips several consecutive ticks; only one message goes out.
        assert d1.counters["originations"] == 1
        assert d1.counters["suppressed_originations"] >= 1
        assert len({(t.eew_origin, t.eew_seq) for t in report.transmissions if t.kind == "Eew"}) == 1


class TestGossipRelay:
    def test_duplicate_arrival_neither_alerts_nor_relays_twice(self):
        sim = quiet_sim()
        sim.add_detector("d1", loc(0))
        sim.add_detector("d2", loc(10))
        sim.add_detector("d3", loc(5, 8))
        sim.add_probe("p1", loc(0))
        sim.add_quake(QuakeSource(loc(0), 20_000, 0.05))
        report = sim.run(30_000)
        assert report.audit_result.passed
        per_node = {}
        for a in report.alerts:
            per_node[a.node_id] = per_node.get(a.node_id, 0) + 1
        assert per_node == {"d1": 1, "d2": 1, "d3": 1}
        # Triangle topology: d2 and d3 each relay once despite two inbound copies.
        relays = [t for t in report.transmissions if t.kind == "Eew" and t.src in ("d2", "d3")]
        assert {t.src for t in relays} == {"d2", "d3"}

    def test_out_of_range_node_alerts_but_never_relays(self):
        sim = quiet_sim()
        sim.add_detector("d1", loc(0))
        sim.add_detector("d2", loc(150))
        sim.add_detector("d3", loc(160))
        sim.add_probe("p1", loc(0))
        sim.add_quake(QuakeSource(loc(0), 20_000, 0.05))
        report = sim.run(30_000)
        assert report.audit_result.passed
        assert {a.node_id for a in report.alerts} == {"d1", "d2", "d3"}
        # d2/d3 sit beyond the 100 km radius: they may receive the one-hop
        # delivery from the origin, but must not relay it onward.
        assert all(t.src == "d1" for t in report.transmissions if t.kind == "Eew")


class TestProbeLifecycle:
    def test_probe_reassigned_to_next_nearest_after_crash(self):
        sim = quiet_sim()
        sim.add_detector("d1", loc(0))
        sim.add_detector("d2", loc(1.0))
        probe = sim.add_probe("p1", loc(0))
        sim.schedule_fault(FaultAction(15_000, "crash_node", "d1"))
        report = sim.run(30_000)
        assert probe.assigned is not None and probe.assigned.node_id == "d2"
        assert probe.counters["reassignments"] == 1
        # Connection loss is noticed within failure detection, then the 5 s
        # re-query delay applies before the authority answers again.
        resumed = [
            t for t in report.transmissions if t.kind == "SampleBatch" and t.dst == "d2" and t.status == "delivered"
        ]
        assert resumed and 21_000 <= resumed[0].t_ms <= 23_000

    def test_probe_falls_back_to_known_detector_when_authority_dark(self):
        sim = quiet_sim()
        sim.add_detector("d1", loc(0))
        probe = sim.add_probe("p1", loc(0), pinned_detector="d1")
        sim.schedule_fault(FaultAction(0, "authority_down"))
        report = sim.run(10_000)
        assert probe.assigned is not None and probe.assigned.node_id == "d1"
        batches = [t for t in report.transmissions if t.kind == "SampleBatch" and t.status == "delivered"]
        assert batches and batches[0].t_ms >= probe.config.query_timeout_ms

    def test_probe_backs_off_when_no_detector_exists(self):
        sim = quiet_sim()
        sim.add_detector("d1", loc(0), start_at_ms=8_000)
        probe = sim.add_probe("p1", loc(0))
        report = sim.run(20_000)
        assert probe.assigned is not None and probe.assigned.node_id == "d1"
        queries = [t for t in report.transmissions if t.kind == "ProbeQuery"]
        assert len(queries) >= 3  # initial try plus backoff retries


class TestReviveAndLeases:
    def test_crashed_detector_expires_and_disappears_from_lists(self):
        sim = quiet_sim()
        sim.add_detector("d1", loc(0))
        sim.add_detector("d2", loc(1.0))
        sim.schedule_fault(FaultAction(20_000, "crash_node", "d1"))
        sim.run(125_000)
        state = sim.authorities["authority"].state
        live = [r.node_id for r in state.snapshot().records]
        assert live == ["d2"]  # d1's 90 s lease lapsed and was evicted
        assert state.assign_probe(loc(0), now_ms=125_000).node_id == "d2"

    def test_revived_detector_rejoins_mesh(self):
        sim = quiet_sim()
        sim.add_detector("d1", loc(0))
        sim.add_detector("d2", loc(1.0))
        sim.schedule_fault(FaultAction(10_000, "crash_node", "d2"))
        sim.schedule_fault(FaultAction(20_000, "revive_node", "d2"))
        sim.run(30_000)
        d2 = sim.net.bindings["d2"].actor
        assert d2.registered
        assert set(d2.neighbors) == {"d1"}
        d1 = sim.net.bindings["d1"].actor
        assert set(d1.neighbors) == {"d2"}
