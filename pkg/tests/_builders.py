"""Small hand-built sequences shared by the test modules."""

from __future__ import annotations

from itrack.dataset import EventKind, FrameAnnotation, InteractionEvent, Scenario, Sequence
from itrack.geometry import BoundingBox, FrameSize
from itrack.metrics import FramePrediction


def B(x, y, w, h) -> BoundingBox:
    return BoundingBox(float(x), float(y), float(w), float(h))


def make_seq(gt, events, size=(100, 100), name="fixture", scenario=Scenario.OTHER, **kw) -> Sequence:
    """``gt`` is a list of boxes (``None`` = absent); ``events`` a list of
    ``(t, kind, gt_new, gt_old)`` tuples or ready InteractionEvents."""
    frames = tuple(FrameAnnotation(t, b) for t, b in enumerate(gt))
    evs = []
    for e in events:
        if isinstance(e, InteractionEvent):
            evs.append(e)
            continue
        t, kind, new, *rest = e
        old = rest[0] if rest else None
        evs.append(InteractionEvent(t, EventKind(kind), f"{kind} at {t}", new, old))
    return Sequence(name, scenario, FrameSize(*size), frames, tuple(evs), **kw)


def preds(boxes) -> list[FramePrediction]:
    return [FramePrediction(t, b) for t, b in enumerate(boxes)]


# --- spot-value fixtures ------------------------------------------------------

GT = B(0, 0, 10, 10)


def three_event_fixture():
    # predictions nested inside the target give IoU = area ratio: 0.6, 0.4, 0.9
    seq = make_seq([GT] * 3, [(0, "init", GT), (1, "correction", GT), (2, "refine", GT)])
    return seq, preds([B(0, 0, 6, 10), B(0, 0, 4, 10), B(0, 0, 9, 10)])


def two_switch_fixture():
    seq = make_seq(
        [GT] * 3,
        [(0, "init", GT), (1, "switch", GT, B(0, 0, 35, 10)), (2, "switch", GT, B(0, 0, 5, 10))],
    )
    # t=1: IoU_new 0.7, IoU_old 70/350 = 0.2; t=2: IoU_new 0.3, IoU_old 30/50 = 0.6
    return seq, preds([GT, B(0, 0, 7, 10), B(0, 0, 3, 10)])


def two_segment_fixture():
    seq = make_seq([GT] * 3, [(0, "init", GT), (2, "correction", GT)])
    return seq, preds([GT, B(0, 0, 5, 10), B(50, 50, 10, 10)])  # segments {1.0, 0.5}, {0.0}
