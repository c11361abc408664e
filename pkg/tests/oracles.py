"""Independent straight-line oracles used by the tests.

These deliberately re-derive expected values with different formulas or
brute force rather than calling the code paths they check.
"""

from __future__ import annotations

import math
from collections import deque

from quakemesh.core import GeoLocation, haversine_distance

EARTH_RADIUS_KM = 6371.0


def law_of_cosines_km(a: GeoLocation, b: GeoLocation) -> float:
    """Great-circle distance via the spherical law of cosines."""
    p1 = math.radians(a.latitude_deg)
    p2 = math.radians(b.latitude_deg)
    dl = math.radians(b.longitude_deg - a.longitude_deg)
    cosine = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_KM * math.acos(max(-1.0, min(1.0, cosine)))


def knn_union_graph(locations: dict[str, GeoLocation], k: int) -> dict[str, set[str]]:
    """Undirected union of each node's k nearest neighbors (ties by id)."""
    graph: dict[str, set[str]] = {nid: set() for nid in locations}
    for nid, loc in locations.items():
        ranked = sorted(
            ((haversine_distance(loc, other_loc), other) for other, other_loc in locations.items() if other != nid),
        key=lambda pair: (pair[0], pair[1]),
        )
        for _, neighbor in ranked[:k]:
            graph[nid].add(neighbor)
            graph[neighbor].add(nid)
    return graph


def bfs_reachable(graph: dict[str, set[str]], origin: str, allowed=None) -> set[str]:
    """Nodes reachable from origin, optionally restricted to an allowed relay set.

    The origin and any allowed relay deliver to all their neighbors; nodes
    outside the allowed set can be reached but never extend the frontier,
    matching the one-hop overshoot semantics of the distance bound.
    """
    if origin not in graph:
        return set()
    reached = {origin}
    frontier = deque([origin])
    while frontier:
        node = frontier.popleft()
        if allowed is not None and node != origin and node not in allowed:
            continue
        for peer in graph.get(node, ()):
            if peer not in reached:
                reached.add(peer)
                frontier.append(peer)
    return reached


def shortest_hops(graph: dict[str, set[str]], origin: str) -> dict[str, int]:
    dist = {origin: 0}
    frontier = deque([origin])
    while frontier:
        node = frontier.popleft()
        for peer in graph.get(node, ()):
            if peer not in dist:
                dist[peer] = dist[node] + 1
                frontier.append(peer)
    return dist


def links_to_graph(pairs) -> dict[str, set[str]]:
    graph: dict[str, set[str]] = {}
    for pair in pairs:
        a, b = sorted(pair)
        graph.setdefault(a, set()).add(b)
        graph.setdefault(b, set()).add(a)
    return graph
