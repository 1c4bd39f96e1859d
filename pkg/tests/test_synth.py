from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itrack import dataset
from itrack.dataset import EventKind, Scenario, validate
from itrack.synth import (
    ObjectSpec,
    ScriptedEvent,
    SynthSpec,
    SynthSpecError,
    ablation_suite,
    referent_timeline,
    spec_from_dict,
    synthesize,
)


def two_object_switch_spec():
    return SynthSpec(
        seed=5,
        n_frames=100,
        objects=(
            ObjectSpec("linear", size=(40, 30), start=(100.0, 100.0), velocity=(1.5, 0.25)),
            ObjectSpec("linear", size=(20, 20), start=(500.0, 300.0), velocity=(-2.0, -0.5)),
        ),
        events=(ScriptedEvent(0, EventKind.INIT, 0), ScriptedEvent(50, EventKind.SWITCH, 1)),
    )


def hand_box(start, vel, size, t, W=640, H=360):
    w, h = size
    cx, cy = start[0] + vel[0] * t, start[1] + vel[1] * t
    x = min(max(cx - w / 2, 0.0), W - w)
    y = min(max(cy - h / 2, 0.0), H - h)
    return [x, y, float(w), float(h)]


def test_switch_moves_the_referent_at_the_switch_frame():
    seq = synthesize(two_object_switch_spec())
    for t in range(100):
        if t < 50:
            want = hand_box((100.0, 100.0), (1.5, 0.25), (40, 30), t)
        else:
            want = hand_box((500.0, 300.0), (-2.0, -0.5), (20, 20), t)
        assert seq.frames[t].box.to_list() == pytest.approx(want, abs=1e-6)
    sw = seq.events[1]
    assert sw.kind is EventKind.SWITCH
    assert sw.gt_old.to_list() == pytest.approx(hand_box((100.0, 100.0), (1.5, 0.25), (40, 30), 50), abs=1e-6)
    assert sw.gt_new == seq.frames[50].box


def test_single_linear_object_has_collinear_centers():
    spec = SynthSpec(seed=1, n_frames=40, objects=(ObjectSpec("linear", start=(300.0, 180.0), velocity=(1.0, 0.5)),), events=(ScriptedEvent(0, EventKind.INIT, 0),))
    seq = synthesize(spec)
    assert all(f.box is not None for f in seq.frames)
    c = np.array([[f.box.x + f.box.w / 2, f.box.y + f.box.h / 2] for f in seq.frames])
    d = c - c[0]
    cross = d[:, 0] * d[-1, 1] - d[:, 1] * d[-1, 0]
    assert np.max(np.abs(cross)) < 1e-3


def test_same_spec_gives_byte_identical_files():
    spec = ablation_suite(seed=3, n_sequences=1)[0]
    assert dataset.dumps(synthesize(spec)) == dataset.dumps(synthesize(spec))


def test_sinusoidal_formula():
    o = ObjectSpec("sinusoidal", size=(10, 10), start=(320.0, 180.0), velocity=(0.0, 0.0), amplitude=20.0, period=40.0)
    seq = synthesize(SynthSpec(seed=0, n_frames=41, objects=(o,), events=(ScriptedEvent(0, EventKind.INIT, 0),)))
    for t in (0, 10, 20, 30, 40):
        cy = 180.0 + 20.0 * math.sin(2 * math.pi * t / 40.0)
        assert seq.frames[t].box.y + 5 == pytest.approx(cy, abs=1e-6)


def test_piecewise_linear_passes_through_waypoints():
    o = ObjectSpec("piecewise-linear", size=(10, 10), waypoints=((0, 50.0, 50.0), (10, 150.0, 50.0), (20, 150.0, 250.0)))
    seq = synthesize(SynthSpec(seed=0, n_frames=21, objects=(o,), events=(ScriptedEvent(0, EventKind.INIT, 0),)))
    assert seq.frames[5].box.to_list() == pytest.approx([95.0, 45.0, 10.0, 10.0])
    assert seq.frames[20].box.to_list() == pytest.approx([145.0, 245.0, 10.0, 10.0])


def test_ablation_preset_covers_all_scenarios():
    specs = ablation_suite()
    assert len(specs) == 20
    assert {s.scenario for s in specs} == set(Scenario)
    assert len({s.name for s in specs}) == 20


def test_generated_sequences_are_valid_and_absence_is_faithful():
    for spec in ablation_suite(seed=1):
        seq = synthesize(spec)
        assert validate(seq) == []
        ref = referent_timeline(spec)
        for t, fr in enumerate(seq.frames):
            hidden = any(a <= t <= b for a, b in spec.objects[ref[t]].occlusions)
            assert fr.absent == hidden
            assert (seq.objects[str(ref[t])][t] is None) == hidden


def test_features_are_unit_norm_with_requested_similarity():
    spec = ablation_suite(n_sequences=1)[0]
    seq = synthesize(spec)
    f = {k: v for k, v in seq.features.items()}
    for v in f.values():
        assert np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-5)
    cos = float(np.mean(np.sum(f["0"] * f["1"], axis=1)))
    assert cos == pytest.approx(spec.distractor_similarity, abs=0.02)


settings_fast = settings(max_examples=40, deadline=None)


@settings_fast
@given(
    seed=st.integers(0, 2**31),
    n=st.integers(5, 80),
    kinds=st.lists(st.sampled_from(["linear", "sinusoidal", "piecewise-linear"]), min_size=1, max_size=4),
    sim=st.floats(0.0, 1.0),
    data=st.data(),
)
def test_any_valid_spec_synthesises_valid_data(seed, n, kinds, sim, data):
    objects = []
    for k in kinds:
        a = data.draw(st.integers(0, n - 1))
        b = data.draw(st.integers(a, n - 1))
        occ = ((a, b),) if data.draw(st.booleans()) else ()
        objects.append(ObjectSpec(k, occlusions=occ))
    ts = sorted(set(data.draw(st.lists(st.integers(1, n - 1), max_size=4))))
    events = [ScriptedEvent(0, EventKind.INIT, 0)]
    cur = 0
    for t in ts:
        target = data.draw(st.integers(0, len(kinds) - 1))
        kind = EventKind.SWITCH if target != cur else data.draw(st.sampled_from([EventKind.CORRECTION, EventKind.REFINE]))
        events.append(ScriptedEvent(t, kind, target))
        cur = target
    spec = SynthSpec(seed=seed, n_frames=n, objects=tuple(objects), events=tuple(events), distractor_similarity=sim)
    seq = synthesize(spec)
    assert validate(seq) == []


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"n_frames": 0}, "n_frames"),
        ({"objects": [{"trajectory": "spiral"}]}, "objects[0].trajectory"),
        ({"objects": [{"occlusions": [[5, 50]]}]}, "objects[0].occlusions[0]"),
        ({"events": [{"t": 0, "kind": "teleport", "target": 0}]}, "events[0].kind"),
        ({"scenario": "moon"}, "scenario"),
        ({"colour": "red"}, "colour"),
    ],
)
def test_spec_errors_name_the_field(patch, field):
    raw = {"seed": 0, "n_frames": 20, "objects": [{"trajectory": "linear"}], "events": [{"t": 0, "kind": "init", "target": 0}]}
    raw.update(patch)
    with pytest.raises(SynthSpecError) as ei:
        spec_from_dict(raw)
    assert ei.value.field == field


def test_events_beyond_the_sequence_are_spec_errors():
    raw = {"seed": 0, "n_frames": 20, "objects": [{}], "events": [{"t": 0, "kind": "init", "target": 0}, {"t": 25, "kind": "refine", "target": 0}]}
    with pytest.raises(SynthSpecError):
        spec_from_dict(raw)
