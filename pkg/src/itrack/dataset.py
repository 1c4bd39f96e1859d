"""Annotation schema for interactive tracking sequences.

A :class:`Sequence` holds per-frame ground truth (a box or an explicit absence),
the timestamped prompt schedule, and optional per-object geometry/features used
by the in-process synthetic backends. Files use the ``itrack/1`` JSON schema.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import _json
from .geometry import BoundingBox, FrameSize, InvalidGeometryError

SCHEMA_VERSION = "itrack/1"


class Scenario(str, enum.Enum):
    DAILY_ACTIVITIES = "daily_activities"
    SPORTS_ANALYSIS = "sports_analysis"
    UAV_TRACKING = "uav_tracking"
    SURVEILLANCE = "surveillance"
    WILDLIFE_MONITORING = "wildlife_monitoring"
    OTHER = "other"


class EventKind(str, enum.Enum):
    INIT = "init"
    CORRECTION = "correction"
    REFINE = "refine"
    SWITCH = "switch"


class DatasetError(Exception):
    """Base class for sequence file problems."""


class ParseError(DatasetError):
    def __init__(self, path: str | os.PathLike | None, line: int, column: int, reason: str):
        self.path = str(path) if path is not None else None
        self.line = line
        self.column = column
        where = f"{self.path}:" if self.path else ""
        super().__init__(f"{where}{line}:{column}: {reason}")


class SchemaError(DatasetError):
    def __init__(self, field_path: str, reason: str):
        self.field = field_path
        super().__init__(f"{field_path}: {reason}")


class SchemaVersionError(DatasetError):
    def __init__(self, found: Any):
        self.found = found
        super().__init__(f"unsupported schema {found!r}, expected {SCHEMA_VERSION!r}")


@dataclass(frozen=True)
class FrameAnnotation:
    """Ground truth at one frame; ``box is None`` means the target is absent."""

    t: int
    box: BoundingBox | None

    @property
    def absent(self) -> bool:
        return self.box is None


@dataclass(frozen=True)
class InteractionEvent:
    t: int
    kind: EventKind
    text: str
    gt_new: BoundingBox
    gt_old: BoundingBox | None = None
    # optional annotation of the previous target around a switch, keyed by frame
    gt_old_window: Mapping[int, BoundingBox] | None = None


@dataclass(frozen=True, eq=False)
class Sequence:
    name: str
    scenario: Scenario
    size: FrameSize
    frames: tuple[FrameAnnotation, ...]
    events: tuple[InteractionEvent, ...]
    # object-id -> (n_frames, d) array of feature vectors
    features: Mapping[str, np.ndarray] | None = None
    # object-id -> per-frame box (None while that object is hidden)
    objects: Mapping[str, tuple[BoundingBox | None, ...]] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "events", tuple(self.events))
        if self.features is not None:
            feats = {str(k): np.asarray(v, dtype=float) for k, v in self.features.items()}
            for arr in feats.values():
                arr.setflags(write=False)
            object.__setattr__(self, "features", feats)
        if self.objects is not None:
            object.__setattr__(self, "objects", {str(k): tuple(v) for k, v in self.objects.items()})

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @cached_property
    def gt_array(self) -> np.ndarray:
        """``(n, 4)`` xywh ground truth with NaN rows at absent frames."""
        out = np.full((len(self.frames), 4), np.nan)
        for i, fr in enumerate(self.frames):
            if fr.box is not None:
                out[i] = fr.box.to_list()
        return out

    @cached_property
    def event_index(self) -> dict[int, InteractionEvent]:
        return {ev.t: ev for ev in self.events}

    def switch_events(self) -> list[InteractionEvent]:
        return [ev for ev in self.events if ev.kind is EventKind.SWITCH]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sequence):
            return NotImplemented
        if (self.name, self.scenario, self.size, self.frames, self.events, self.objects) != (
            other.name,
            other.scenario,
            other.size,
            other.frames,
            other.events,
            other.objects,
        ):
            return False
        if (self.features is None) != (other.features is None):
            return False
        if self.features is None:
            return True
        if self.features.keys() != other.features.keys():
            return False
        return all(np.array_equal(self.features[k], other.features[k]) for k in self.features)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Violation:
    locus: str
    message: str

    def __str__(self) -> str:
        return f"{self.locus}: {self.message}"


def validate(seq: Sequence) -> list[Violation]:
    """Return every invariant violation found in ``seq``; empty means valid."""
    out: list[Violation] = []
    n = len(seq.frames)
    if n == 0:
        out.append(Violation("frames", "sequence has no frames"))

    for i, fr in enumerate(seq.frames):
        if fr.t != i:
            out.append(Violation(f"frames[{i}]", f"frame index {fr.t} breaks contiguity (expected {i})"))
        if fr.box is not None and not seq.size.contains(fr.box):
            out.append(
                Violation(
                    f"frames[{i}] (t={fr.t})",
                    f"box {fr.box.to_list()} exceeds frame bounds {seq.size.width}x{seq.size.height}",
                )
            )

    if not seq.events:
        out.append(Violation("events", "sequence has no interaction events"))
    else:
        first = seq.events[0]
        if first.kind is not EventKind.INIT or first.t != 0:
            out.append(Violation("events[0]", f"first event must be init at t=0, got {first.kind.value} at t={first.t}"))
    prev_t: int | None = None
    for j, ev in enumerate(seq.events):
        locus = f"events[{j}] (t={ev.t})"
        if prev_t is not None and ev.t <= prev_t:
            out.append(Violation(locus, f"event frame {ev.t} not after previous event frame {prev_t}"))
        prev_t = ev.t
        if j > 0 and ev.kind is EventKind.INIT:
            out.append(Violation(locus, "init event after the first event"))
        if not 0 <= ev.t < n:
            out.append(Violation(locus, f"event frame outside [0, {n})"))
            continue
        if ev.kind is EventKind.SWITCH and ev.gt_old is None:
            out.append(Violation(locus, "switch event is missing gt_old"))
        if ev.kind is not EventKind.SWITCH and ev.gt_old is not None:
            out.append(Violation(locus, f"{ev.kind.value} event must not carry gt_old"))
        fr_box = seq.frames[ev.t].box if ev.t < len(seq.frames) else None
        if fr_box is not None and fr_box != ev.gt_new:
            out.append(Violation(locus, f"gt_new {ev.gt_new.to_list()} differs from frame box {fr_box.to_list()}"))
        if ev.gt_old_window:
            for wt in ev.gt_old_window:
                if not 0 <= wt < n:
                    out.append(Violation(locus, f"gt_old_window frame {wt} outside [0, {n})"))

    if seq.features is not None:
        dims = set()
        for oid, arr in seq.features.items():
            if arr.ndim != 2 or arr.shape[0] != n:
                out.append(Violation(f"features[{oid}]", f"expected {n} per-frame vectors, got shape {arr.shape}"))
                continue
            dims.add(arr.shape[1])
            if not np.all(np.isfinite(arr)):
                out.append(Violation(f"features[{oid}]", "non-finite feature value"))
        if len(dims) > 1:
            out.append(Violation("features", f"inconsistent feature dimensions {sorted(dims)}"))
    if seq.objects is not None:
        for oid, boxes in seq.objects.items():
            if len(boxes) != n:
                out.append(Violation(f"objects[{oid}]", f"expected {n} per-frame entries, got {len(boxes)}"))
    return out


# --- serialisation --------------------------------------------------------

_TOP_FIELDS = {"schema", "name", "scenario", "width", "height", "frames", "events", "features", "objects"}
_FRAME_FIELDS = {"t", "box", "absent"}
_EVENT_FIELDS = {"t", "kind", "text", "gt_new", "gt_old", "gt_old_window"}


def _box_json(box: BoundingBox) -> list[float]:
    return box.to_list()


def to_dict(seq: Sequence) -> dict[str, Any]:
    frames = [{"t": f.t, "absent": True} if f.box is None else {"t": f.t, "box": _box_json(f.box)} for f in seq.frames]
    events = []
    for ev in seq.events:
        d: dict[str, Any] = {"t": ev.t, "kind": ev.kind.value, "text": ev.text, "gt_new": _box_json(ev.gt_new)}
        if ev.gt_old is not None:
            d["gt_old"] = _box_json(ev.gt_old)
        if ev.gt_old_window:
            d["gt_old_window"] = {str(k): _box_json(v) for k, v in sorted(ev.gt_old_window.items())}
        events.append(d)
    out: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "name": seq.name,
        "scenario": seq.scenario.value,
        "width": seq.size.width,
        "height": seq.size.height,
        "frames": frames,
        "events": events,
    }
    if seq.features is not None:
        out["features"] = {k: v.tolist() for k, v in seq.features.items()}
    if seq.objects is not None:
        out["objects"] = {k: [None if b is None else _box_json(b) for b in v] for k, v in seq.objects.items()}
    return out


def dumps(seq: Sequence) -> str:
    """Serialise with one frame/event per line so parse errors point somewhere useful."""
    d = to_dict(seq)
    enc = lambda v: _json.dumps(v, float_format=_json.short6, sort_keys=False)  # noqa: E731
    lines = ["{"]
    head = ["schema", "name", "scenario", "width", "height"]
    for key in head:
        lines.append(f'"{key}":{enc(d[key])},')
    for key in ("frames", "events"):
        lines.append(f'"{key}":[')
        items = d[key]
        lines.extend(enc(item) + ("," if i < len(items) - 1 else "") for i, item in enumerate(items))
        lines.append("],")
    for key in ("features", "objects"):
        if key in d:
            lines.append(f'"{key}":{{')
            keys = sorted(d[key], key=_oid_sort_key)
            lines.extend(
                f"{enc(k)}:{enc(d[key][k])}" + ("," if i < len(keys) - 1 else "") for i, k in enumerate(keys)
            )
            lines.append("},")
    lines[-1] = lines[-1].rstrip(",")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _oid_sort_key(oid: str) -> tuple[int, Any]:
    return (0, int(oid)) if oid.isdigit() else (1, oid)


def save(seq: Sequence, path: str | os.PathLike) -> None:
    Path(path).write_text(dumps(seq), encoding="utf-8")


def load(path: str | os.PathLike, lenient: bool = False) -> Sequence:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(path, 1, exc.start + 1, "file is not valid UTF-8") from exc
    return loads(text, lenient=lenient, path=path)


def loads(text: str, lenient: bool = False, path: str | os.PathLike | None = None) -> Sequence:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.colno, exc.msg) from exc
    return from_dict(raw, lenient=lenient)


def _check_fields(obj: Any, allowed: set[str], where: str, lenient: bool) -> dict[str, Any]:
    if not isinstance(obj, dict):
        raise SchemaError(where, f"expected an object, got {type(obj).__name__}")
    if not lenient:
        extra = sorted(set(obj) - allowed)
        if extra:
            raise SchemaError(f"{where}.{extra[0]}" if where else extra[0], "unknown field")
    return obj


def _require(obj: dict[str, Any], key: str, where: str) -> Any:
    if key not in obj:
        raise SchemaError(f"{where}.{key}" if where else key, "missing required field")
    return obj[key]


def _int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(where, f"expected an integer, got {value!r}")
    return value


def _box(value: Any, where: str) -> BoundingBox:
    if not isinstance(value, list) or len(value) != 4:
        raise SchemaError(where, f"expected [x, y, w, h], got {value!r}")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise SchemaError(where, f"box values must be numbers, got {value!r}")
    try:
        return BoundingBox(*value)
    except InvalidGeometryError as exc:
        raise SchemaError(where, str(exc)) from exc


def from_dict(raw: Any, lenient: bool = False) -> Sequence:
    if not isinstance(raw, dict):
        raise SchemaError("", "top level must be a JSON object")
    if raw.get("schema") != SCHEMA_VERSION:
        raise SchemaVersionError(raw.get("schema"))
    _check_fields(raw, _TOP_FIELDS, "", lenient)

    name = _require(raw, "name", "")
    if not isinstance(name, str):
        raise SchemaError("name", "expected a string")
    scen = _require(raw, "scenario", "")
    try:
        scenario = Scenario(scen)
    except ValueError:
        raise SchemaError("scenario", f"unknown scenario {scen!r}") from None
    try:
        size = FrameSize(_int(_require(raw, "width", ""), "width"), _int(_require(raw, "height", ""), "height"))
    except InvalidGeometryError as exc:
        raise SchemaError("width/height", str(exc)) from exc

    frames_raw = _require(raw, "frames", "")
    if not isinstance(frames_raw, list):
        raise SchemaError("frames", "expected a list")
    frames = []
    for i, fr in enumerate(frames_raw):
        where = f"frames[{i}]"
        _check_fields(fr, _FRAME_FIELDS, where, lenient)
        t = _int(_require(fr, "t", where), f"{where}.t")
        has_box = "box" in fr
        absent = fr.get("absent", False)
        if absent is not True and absent is not False:
            raise SchemaError(f"{where}.absent", "expected true")
        if has_box == bool(absent):
            raise SchemaError(where, "exactly one of 'box' or 'absent': true is required")
        frames.append(FrameAnnotation(t, _box(fr["box"], f"{where}.box") if has_box else None))

    events_raw = _require(raw, "events", "")
    if not isinstance(events_raw, list):
        raise SchemaError("events", "expected a list")
    events = []
    for j, ev in enumerate(events_raw):
        where = f"events[{j}]"
        _check_fields(ev, _EVENT_FIELDS, where, lenient)
        t = _int(_require(ev, "t", where), f"{where}.t")
        kind_raw = _require(ev, "kind", where)
        try:
            kind = EventKind(kind_raw)
        except ValueError:
            raise SchemaError(f"{where}.kind", f"unknown event kind {kind_raw!r}") from None
        text = _require(ev, "text", where)
        if not isinstance(text, str):
            raise SchemaError(f"{where}.text", "expected a string")
        gt_new = _box(_require(ev, "gt_new", where), f"{where}.gt_new")
        gt_old = _box(ev["gt_old"], f"{where}.gt_old") if "gt_old" in ev and ev["gt_old"] is not None else None
        window = None
        if ev.get("gt_old_window") is not None:
            w_raw = ev["gt_old_window"]
            if not isinstance(w_raw, dict):
                raise SchemaError(f"{where}.gt_old_window", "expected an object keyed by frame index")
            window = {}
            for k, b in w_raw.items():
                if not str(k).isdigit():
                    raise SchemaError(f"{where}.gt_old_window", f"key {k!r} is not a frame index")
                window[int(k)] = _box(b, f"{where}.gt_old_window.{k}")
        events.append(InteractionEvent(t, kind, text, gt_new, gt_old, window))

    features = None
    if raw.get("features") is not None:
        f_raw = raw["features"]
        if not isinstance(f_raw, dict):
            raise SchemaError("features", "expected an object keyed by object id")
        features = {}
        for oid, rows in f_raw.items():
            try:
                arr = np.asarray(rows, dtype=float)
            except (TypeError, ValueError):
                raise SchemaError(f"features.{oid}", "expected a list of numeric vectors") from None
            if arr.ndim != 2:
                raise SchemaError(f"features.{oid}", "expected a list of equal-length vectors")
            features[oid] = arr

    objects = None
    if raw.get("objects") is not None:
        o_raw = raw["objects"]
        if not isinstance(o_raw, dict):
            raise SchemaError("objects", "expected an object keyed by object id")
        objects = {}
        for oid, rows in o_raw.items():
            if not isinstance(rows, list):
                raise SchemaError(f"objects.{oid}", "expected a list")
            objects[oid] = tuple(None if b is None else _box(b, f"objects.{oid}[{i}]") for i, b in enumerate(rows))

    return Sequence(name, scenario, size, tuple(frames), tuple(events), features, objects)


def load_many(paths: list[str | os.PathLike], lenient: bool = False) -> list[Sequence]:
    """Load files; directories are expanded to their ``*.json`` members in name order."""
    out = []
    for p in expand_paths(paths):
        out.append(load(p, lenient=lenient))
    return out


def expand_paths(paths: list[str | os.PathLike]) -> list[Path]:
    files: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            files.extend(sorted(path.glob("*.json")))
        else:
            files.append(path)
    return files
