"""Canonical text serialization used by the wire codec and report files.

The output is a JSON subset with two extra guarantees: dict keys are
emitted in insertion order (callers build dicts in schema order), and
floats are rendered with at most 9 significant digits. Equal values
therefore always serialize to identical bytes.
"""

from __future__ import annotations

import json
import math


def format_float(value: float) -> str:
    """Render a finite float with at most 9 significant digits."""
    if not math.isfinite(value):
        raise ValueError(f"cannot serialize non-finite float {value!r}")
    if value == 0.0:
        return "0"  # normalize -0.0; equal values must encode identically
    return format(value, ".9g")


def canonical_text(obj) -> str:
    """Serialize a tree of dict/list/str/int/float/bool/None to canonical text."""
    parts: list[str] = []
    _emit(obj, parts)
    return "".join(parts)


def _emit(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=True))
    elif isinstance(obj, int):
        out.append(repr(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, dict):
        out.append("{")
        first = True
        for key, value in obj.items():
            if not isinstance(key, str):
                raise TypeError(f"canonical dict keys must be str, got {type(key).__name__}")
            if not first:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _emit(value, out)
            first = False
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, value in enumerate(obj):
            if i:
                out.append(",")
            _emit(value, out)
        out.append("]")
    else:
        raise TypeError(f"cannot canonicalize {type(obj).__name__}")
