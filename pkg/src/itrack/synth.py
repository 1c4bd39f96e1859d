"""Deterministic synthetic sequences.

Objects move along simple parametric paths inside the frame; the scripted
event list decides which object the ground truth refers to at each frame.
Anything left unspecified in an :class:`ObjectSpec` is drawn from a generator
seeded by ``(seed, object index)``, so identical specs give identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dataset import EventKind, FrameAnnotation, InteractionEvent, Scenario, Sequence
from .geometry import BoundingBox, FrameSize

TRAJECTORY_KINDS = ("linear", "sinusoidal", "piecewise-linear")


class SynthSpecError(ValueError):
    def __init__(self, field_path: str, reason: str):
        self.field = field_path
        self.reason = reason
        super().__init__(f"{field_path}: {reason}")


@dataclass(frozen=True)
class ObjectSpec:
    trajectory: str = "linear"
    size: tuple[int, int] | None = None
    start: tuple[float, float] | None = None  # box center at t=0
    velocity: tuple[float, float] | None = None  # px / frame
    amplitude: float | None = None  # sinusoidal: vertical swing in px
    period: float | None = None  # sinusoidal: frames per cycle
    waypoints: tuple[tuple[int, float, float], ...] | None = None  # (t, cx, cy)
    occlusions: tuple[tuple[int, int], ...] = ()  # inclusive frame ranges


@dataclass(frozen=True)
class ScriptedEvent:
    t: int
    kind: EventKind
    target: int
    text: str | None = None


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_frames: int
    objects: tuple[ObjectSpec, ...]
    events: tuple[ScriptedEvent, ...]
    distractor_similarity: float = 0.5
    width: int = 640
    height: int = 360
    name: str = "synthetic"
    scenario: Scenario = Scenario.OTHER
    feature_dim: int = 16
    feature_noise: float = 0.02

    @property
    def n_objects(self) -> int:
        return len(self.objects)


@dataclass(frozen=True)
class ResolvedObject:
    """An object with every trajectory parameter fixed."""

    trajectory: str
    size: tuple[int, int]
    start: tuple[float, float]
    velocity: tuple[float, float]
    amplitude: float
    period: float
    waypoints: tuple[tuple[int, float, float], ...]
    occlusions: tuple[tuple[int, int], ...] = field(default=())


_DEFAULT_TEXT = {
    EventKind.INIT: "track object {id}",
    EventKind.CORRECTION: "you lost it, object {id} is here",
    EventKind.REFINE: "focus on the upper part of object {id}",
    EventKind.SWITCH: "now follow object {id} instead",
}


def _check(spec: SynthSpec) -> None:
    n = spec.n_frames
    if isinstance(spec.n_frames, bool) or not isinstance(spec.n_frames, int) or n < 1:
        raise SynthSpecError("n_frames", f"must be a positive integer, got {n!r}")
    if len(spec.objects) < 1:
        raise SynthSpecError("objects", "at least one object is required")
    if spec.width <= 0 or spec.height <= 0:
        raise SynthSpecError("width/height", "frame size must be positive")
    if not 0.0 <= spec.distractor_similarity <= 1.0:
        raise SynthSpecError("distractor_similarity", "must lie in [0, 1]")
    if spec.feature_dim < spec.n_objects + 1:
        raise SynthSpecError("feature_dim", f"needs at least n_objects + 1 = {spec.n_objects + 1} dimensions")
    if spec.feature_noise < 0:
        raise SynthSpecError("feature_noise", "must be non-negative")
    for i, obj in enumerate(spec.objects):
        if obj.trajectory not in TRAJECTORY_KINDS:
            raise SynthSpecError(f"objects[{i}].trajectory", f"unknown kind {obj.trajectory!r}")
        if obj.size is not None:
            w, h = obj.size
            if not (0 < w <= spec.width and 0 < h <= spec.height):
                raise SynthSpecError(f"objects[{i}].size", f"{obj.size} does not fit a {spec.width}x{spec.height} frame")
        for k, (a, b) in enumerate(obj.occlusions):
            if not (0 <= a <= b < n):
                raise SynthSpecError(f"objects[{i}].occlusions[{k}]", f"range {(a, b)} outside [0, {n})")
        for attr in ("amplitude", "period"):
            v = getattr(obj, attr)
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise SynthSpecError(f"objects[{i}].{attr}", f"must be a number, got {v!r}")
        if obj.period is not None and obj.period <= 0:
            raise SynthSpecError(f"objects[{i}].period", "must be positive")
    if not spec.events:
        raise SynthSpecError("events", "at least an init event is required")
    referent = None
    prev_t = -1
    for j, ev in enumerate(spec.events):
        where = f"events[{j}]"
        if not 0 <= ev.t < n:
            raise SynthSpecError(f"{where}.t", f"frame {ev.t} outside [0, {n})")
        if ev.t <= prev_t:
            raise SynthSpecError(f"{where}.t", "event frames must be strictly increasing")
        prev_t = ev.t
        if not 0 <= ev.target < spec.n_objects:
            raise SynthSpecError(f"{where}.target", f"object {ev.target} does not exist")
        kind = EventKind(ev.kind)
        if j == 0:
            if kind is not EventKind.INIT or ev.t != 0:
                raise SynthSpecError(where, "first event must be init at t=0")
        elif kind is EventKind.INIT:
            raise SynthSpecError(f"{where}.kind", "init is only allowed as the first event")
        elif kind is EventKind.SWITCH and ev.target == referent:
            raise SynthSpecError(f"{where}.target", "switch must change the referent")
        elif kind is not EventKind.SWITCH and ev.target != referent:
            raise SynthSpecError(f"{where}.target", f"{kind.value} must refer to the current object {referent}")
        referent = ev.target


def resolve_objects(spec: SynthSpec) -> list[ResolvedObject]:
    W, H, n = spec.width, spec.height, spec.n_frames
    out = []
    for i, obj in enumerate(spec.objects):
        rng = np.random.default_rng([spec.seed, i])
        # draw everything unconditionally so overrides never shift the stream
        w = int(rng.integers(max(4, W // 20), max(5, W // 6)))
        h = int(rng.integers(max(4, H // 12), max(5, H // 5)))
        if obj.size is not None:
            w, h = int(obj.size[0]), int(obj.size[1])
        start = (float(rng.uniform(w / 2, W - w / 2)), float(rng.uniform(h / 2, H - h / 2)))
        velocity = (float(rng.uniform(-2.0, 2.0)), float(rng.uniform(-1.5, 1.5)))
        amplitude = float(rng.uniform(10.0, max(11.0, H / 8)))
        period = float(rng.uniform(40.0, 160.0))
        wp_t = np.unique(np.round(np.linspace(0, n - 1, 4)).astype(int))
        wp = tuple(
            (int(t), float(rng.uniform(w / 2, W - w / 2)), float(rng.uniform(h / 2, H - h / 2))) for t in wp_t
        )
        out.append(
            ResolvedObject(
                trajectory=obj.trajectory,
                size=(w, h),
                start=tuple(obj.start) if obj.start is not None else start,
                velocity=tuple(obj.velocity) if obj.velocity is not None else velocity,
                amplitude=float(obj.amplitude) if obj.amplitude is not None else amplitude,
                period=float(obj.period) if obj.period is not None else period,
                waypoints=tuple(tuple(p) for p in obj.waypoints) if obj.waypoints is not None else wp,
                occlusions=tuple(obj.occlusions),
            )
        )
    return out


def trajectory_centers(obj: ResolvedObject, n_frames: int) -> np.ndarray:
    """Unclamped ``(n, 2)`` centers before the object is kept inside the frame."""
    t = np.arange(n_frames, dtype=float)
    sx, sy = obj.start
    vx, vy = obj.velocity
    if obj.trajectory == "linear":
        return np.stack([sx + vx * t, sy + vy * t], axis=1)
    if obj.trajectory == "sinusoidal":
        return np.stack([sx + vx * t, sy + vy * t + obj.amplitude * np.sin(2 * math.pi * t / obj.period)], axis=1)
    wp = sorted(obj.waypoints)
    ts = [p[0] for p in wp]
    return np.stack([np.interp(t, ts, [p[1] for p in wp]), np.interp(t, ts, [p[2] for p in wp])], axis=1)


def object_boxes(obj: ResolvedObject, n_frames: int, size: FrameSize) -> list[BoundingBox]:
    """Per-frame boxes ignoring occlusion, kept fully inside the frame."""
    w, h = obj.size
    c = trajectory_centers(obj, n_frames)
    xs = np.clip(c[:, 0] - w / 2, 0.0, size.width - w)
    ys = np.clip(c[:, 1] - h / 2, 0.0, size.height - h)
    boxes = []
    for x, y in zip(xs, ys):
        # round first, clamp after: W - w is integral so x + w <= W stays exact
        bx = min(max(round(float(x), 6), 0.0), float(size.width - w))
        by = min(max(round(float(y), 6), 0.0), float(size.height - h))
        boxes.append(BoundingBox(bx, by, float(w), float(h)))
    return boxes


def _occluded(obj: ResolvedObject, n_frames: int) -> np.ndarray:
    mask = np.zeros(n_frames, dtype=bool)
    for a, b in obj.occlusions:
        mask[a : b + 1] = True
    return mask


def _features(spec: SynthSpec) -> dict[str, np.ndarray]:
    d, n_obj, s = spec.feature_dim, spec.n_objects, spec.distractor_similarity
    basis_rng = np.random.default_rng([spec.seed, 1_000_003])
    q, _ = np.linalg.qr(basis_rng.standard_normal((d, n_obj + 1)))
    shared = q[:, 0]
    out = {}
    for i in range(n_obj):
        proto = math.sqrt(s) * shared + math.sqrt(1.0 - s) * q[:, i + 1]
        noise_rng = np.random.default_rng([spec.seed, i, 7])
        vecs = proto[None, :] + spec.feature_noise * noise_rng.standard_normal((spec.n_frames, d))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        out[str(i)] = np.round(vecs, 6)
    return out


def referent_timeline(spec: SynthSpec) -> np.ndarray:
    """Object index the ground truth refers to at each frame."""
    ref = np.empty(spec.n_frames, dtype=int)
    events = sorted(spec.events, key=lambda e: e.t)
    for j, ev in enumerate(events):
        end = events[j + 1].t if j + 1 < len(events) else spec.n_frames
        ref[ev.t : end] = ev.target
    return ref


def synthesize(spec: SynthSpec) -> Sequence:
    _check(spec)
    size = FrameSize(spec.width, spec.height)
    n = spec.n_frames
    resolved = resolve_objects(spec)
    boxes = [object_boxes(o, n, size) for o in resolved]
    hidden = [_occluded(o, n) for o in resolved]
    ref = referent_timeline(spec)

    frames = tuple(FrameAnnotation(t, None if hidden[ref[t]][t] else boxes[ref[t]][t]) for t in range(n))
    events = []
    prev_target = None
    for ev in spec.events:
        kind = EventKind(ev.kind)
        text = ev.text if ev.text is not None else _DEFAULT_TEXT[kind].format(id=ev.target)
        gt_old = boxes[prev_target][ev.t] if kind is EventKind.SWITCH else None
        events.append(InteractionEvent(ev.t, kind, text, boxes[ev.target][ev.t], gt_old))
        prev_target = ev.target
    objects = {str(i): tuple(None if hidden[i][t] else boxes[i][t] for t in range(n)) for i in range(len(resolved))}
    return Sequence(
        name=spec.name,
        scenario=Scenario(spec.scenario),
        size=size,
        frames=frames,
        events=tuple(events),
        features=_features(spec),
        objects=objects,
    )


# --- spec (de)serialisation and presets -----------------------------------


def spec_from_dict(raw: dict[str, Any]) -> SynthSpec:
    """Build a spec from plain JSON data, reporting problems by field."""
    try:
        return _spec_from_dict(raw)
    except SynthSpecError:
        raise
    except (TypeError, ValueError) as exc:
        # wrongly typed values that slipped past the field checks
        raise SynthSpecError("spec", f"malformed value ({exc})") from None


def _spec_from_dict(raw: dict[str, Any]) -> SynthSpec:
    if not isinstance(raw, dict):
        raise SynthSpecError("", "spec must be a JSON object")
    allowed = {f for f in SynthSpec.__dataclass_fields__}
    extra = sorted(set(raw) - allowed)
    if extra:
        raise SynthSpecError(extra[0], "unknown field")
    for req in ("seed", "n_frames", "objects", "events"):
        if req not in raw:
            raise SynthSpecError(req, "missing required field")
    if isinstance(raw["seed"], bool) or not isinstance(raw["seed"], int):
        raise SynthSpecError("seed", "must be an integer")
    objs = []
    obj_fields = set(ObjectSpec.__dataclass_fields__)
    for i, o in enumerate(raw["objects"] if isinstance(raw["objects"], list) else []):
        if not isinstance(o, dict):
            raise SynthSpecError(f"objects[{i}]", "expected an object")
        bad = sorted(set(o) - obj_fields)
        if bad:
            raise SynthSpecError(f"objects[{i}].{bad[0]}", "unknown field")
        kw = dict(o)
        for key in ("size", "start", "velocity"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if kw.get("waypoints") is not None:
            kw["waypoints"] = tuple(tuple(p) for p in kw["waypoints"])
        kw["occlusions"] = tuple(tuple(r) for r in kw.get("occlusions", ()))
        objs.append(ObjectSpec(**kw))
    if not isinstance(raw["objects"], list):
        raise SynthSpecError("objects", "expected a list")
    events = []
    if not isinstance(raw["events"], list):
        raise SynthSpecError("events", "expected a list")
    for j, e in enumerate(raw["events"]):
        if not isinstance(e, dict):
            raise SynthSpecError(f"events[{j}]", "expected an object")
        try:
            kind = EventKind(e.get("kind"))
        except ValueError:
            raise SynthSpecError(f"events[{j}].kind", f"unknown event kind {e.get('kind')!r}") from None
        for key in ("t", "target"):
            if isinstance(e.get(key), bool) or not isinstance(e.get(key), int):
                raise SynthSpecError(f"events[{j}].{key}", "must be an integer")
        events.append(ScriptedEvent(e["t"], kind, e["target"], e.get("text")))
    kw = {k: v for k, v in raw.items() if k not in ("objects", "events")}
    if "scenario" in kw:
        try:
            kw["scenario"] = Scenario(kw["scenario"])
        except ValueError:
            raise SynthSpecError("scenario", f"unknown scenario {kw['scenario']!r}") from None
    spec = SynthSpec(objects=tuple(objs), events=tuple(events), **kw)
    _check(spec)
    return spec


SCENARIO_ORDER = tuple(Scenario)


def ablation_suite(seed: int = 0, n_sequences: int = 20, n_frames: int = 300) -> list[SynthSpec]:
    """The canonical ablation suite: four objects, a near distractor and one switch per sequence.

    Object 0 is the initial target, object 1 the switch target, object 2 moves
    in parallel with object 0 at a small offset (a distractor whose jump is too
    short to register as a displacement), object 3 wanders freely.
    """
    W, H = 640, 360
    specs = []
    for i in range(n_sequences):
        rng = np.random.default_rng([seed, i, 99])
        scenario = SCENARIO_ORDER[i % len(SCENARIO_ORDER)]
        w0, h0 = int(rng.integers(50, 80)), int(rng.integers(50, 80))
        start0 = (float(rng.uniform(160, 480)), float(rng.uniform(110, 250)))
        vel0 = (float(rng.uniform(-0.4, 0.4)), float(rng.uniform(-0.25, 0.25)))
        offset = (float(rng.choice([-1, 1]) * rng.uniform(40, 55)), float(rng.uniform(-10, 10)))
        kinds = TRAJECTORY_KINDS
        t_corr = int(rng.integers(60, 90))
        t_switch = int(rng.integers(140, 165))
        t_refine = int(rng.integers(215, 245))
        occ_start = int(rng.integers(100, 125))
        objects = (
            ObjectSpec(trajectory="linear", size=(w0, h0), start=start0, velocity=vel0),
            ObjectSpec(trajectory=kinds[i % 3], amplitude=float(rng.uniform(10, 30))),
            ObjectSpec(
                trajectory="linear",
                size=(w0, h0),
                start=(start0[0] + offset[0], start0[1] + offset[1]),
                velocity=vel0,
            ),
            ObjectSpec(trajectory=kinds[(i + 1) % 3], occlusions=((occ_start, occ_start + 12),)),
        )
        events = (
            ScriptedEvent(0, EventKind.INIT, 0),
            ScriptedEvent(t_corr, EventKind.CORRECTION, 0),
            ScriptedEvent(t_switch, EventKind.SWITCH, 1),
            ScriptedEvent(t_refine, EventKind.REFINE, 1),
        )
        specs.append(
            SynthSpec(
                seed=seed * 1000 + i,
                n_frames=n_frames,
                objects=objects,
                events=events,
                distractor_similarity=0.6,
                width=W,
                height=H,
                name=f"ablation_{i:02d}_{scenario.value}",
                scenario=scenario,
            )
        )
    return specs


PRESETS = {"ablation-suite": ablation_suite}

