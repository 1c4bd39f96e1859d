"""Deterministic JSON writing with controlled float formatting."""

from __future__ import annotations

import json
import math
from typing import Any, Callable

import numpy as np


def fixed6(x: float) -> str:
    """Exactly six fractional digits; used for reports so diffs are bit-stable."""
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def short6(x: float) -> str:
    """At most six fractional digits, shortest round-tripping form."""
    value = round(x, 6)
    if value == 0:
        value = 0.0
    s = repr(value)
    if "e" in s or "E" in s:
        s = f"{value:.6f}".rstrip("0")
        if s.endswith("."):
            s += "0"
    return s


def dumps(obj: Any, float_format: Callable[[float], str] = fixed6, sort_keys: bool = True) -> str:
    """Compact single-line JSON; NaN and infinities are rejected."""
    return _encode(obj, float_format, sort_keys)


def _encode(obj: Any, fmt: Callable[[float], str], sort_keys: bool) -> str:
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialise non-finite float {x!r}")
        return fmt(x)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        keys = sorted(obj) if sort_keys else list(obj)
        parts = [f"{json.dumps(str(k), ensure_ascii=False)}:{_encode(obj[k], fmt, sort_keys)}" for k in keys]
        return "{" + ",".join(parts) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_encode(v, fmt, sort_keys) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")
