"""Seeded fuzz-case generator for the frame decoder."""

from __future__ import annotations

import struct

import numpy as np

from quakemesh.core import AccelSample, GeoLocation, SignalWindow
from quakemesh.protocol import (
    Eew,
    EEWMessage,
    Envelope,
    MessageId,
    Neighbor,
    Ping,
    ProbeAssign,
    ProbeHello,
    ProbeQuery,
    Register,
    RegisterAck,
    SampleBatch,
    encode,
)


def _valid_frames() -> list[bytes]:
    loc = GeoLocation(41.9, 12.5)
    window = SignalWindow(
        tuple(AccelSample(1000 + 10 * i, 0.001 * i, -0.002, 1.0) for i in range(5)), "p1", 1000, 1100
    )
    msg = EEWMessage(MessageId("d1", 3), 5000, loc, window, 2)
    envelopes = [
        Envelope("d1", 1, Ping()),
        Envelope("p1", 2, ProbeHello(loc)),
        Envelope("p1", 3, SampleBatch(window.samples)),
        Envelope("d1", 4, Register(loc, "d1", 90000)),
        Envelope("auth", 5, RegisterAck((Neighbor("d2", "d2", loc),))),
        Envelope("p1", 6, ProbeQuery(loc, ("d9",))),
        Envelope("auth", 7, ProbeAssign(None)),
        Envelope("d1", 8, Eew(msg)),
    ]
    return [encode(e) for e in envelopes]


def fuzz_cases(count: int, seed: int):
    """Yield `count` hostile byte strings: random, mutated, and mis-framed."""
    rng = np.random.default_rng(seed)
    frames = _valid_frames()
    for i in range(count):
        strategy = i % 5
        if strategy == 0:
            n = int(rng.integers(0, 64))
            yield rng.bytes(n)
        elif strategy == 1:
            body = rng.bytes(int(rng.integers(0, 48)))
            yield struct.pack(">I", len(body)) + body
        elif strategy == 2:
            frame = bytearray(frames[int(rng.integers(0, len(frames)))])
            for _ in range(int(rng.integers(1, 6))):
                pos = int(rng.integers(0, len(frame)))
                frame[pos] = int(rng.integers(0, 256))
            yield bytes(frame)
        elif strategy == 3:
            frame = frames[int(rng.integers(0, len(frames)))]
            cut = int(rng.integers(0, len(frame)))
            yield frame[:cut]
        else:
            frame = frames[int(rng.integers(0, len(frames)))]
            yield frame + rng.bytes(int(rng.integers(1, 16)))
