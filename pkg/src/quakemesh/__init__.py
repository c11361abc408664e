"""Decentralized earthquake early-warning mesh.

Probes stream acceleration samples to edge detectors; detectors run a
sliding-window detection pipeline, originate warning messages, and relay
them through a distance-bounded gossip mesh. A local-authority service
handles registration, neighbor discovery and warning logging. Everything
can be driven by a deterministic discrete-event simulator.
"""

from quakemesh.core import AccelSample, GeoLocation, SignalWindow, haversine_distance, vector_magnitude

__version__ = "0.1.0"

__all__ = [
    "AccelSample",
    "GeoLocation",
    "SignalWindow",
    "haversine_distance",
    "vector_magnitude",
    "__version__",
]
