"""Brute-force metric reference, written from the formulas without reusing library code.

IoU is evaluated exactly in rationals; everything else is plain loops.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def exact_iou(a, b) -> Fraction:
    ax, ay, aw, ah = map(Fraction, a)
    bx, by, bw, bh = map(Fraction, b)
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    inter = iw * ih if iw > 0 and ih > 0 else Fraction(0)
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else Fraction(0)


def _center(b):
    return b[0] + b[2] / 2, b[1] + b[3] / 2


def _mean(xs):
    xs = list(xs)
    return None if not xs else math.fsum(xs) / len(xs)


def reference_metrics(pred_boxes, seq, tau=0.5, inclusive=False, require_overlap=False):
    """``pred_boxes``: list of [x, y, w, h] or None, one per frame.

    Returns the seven scalars plus ``curves`` (``None`` when no frame is valid).
    """
    gt = [None if f.box is None else f.box.to_list() for f in seq.frames]
    n = len(gt)

    def fiou(t, target=None):
        g = target if target is not None else gt[t]
        if pred_boxes[t] is None:
            return Fraction(0)
        return exact_iou(pred_boxes[t], g)

    # perception: prompts at frames whose target is visible, scored against gt_new
    ev_iou = [fiou(ev.t, ev.gt_new.to_list()) for ev in seq.events if gt[ev.t] is not None]
    acc = _mean(1.0 if v > Fraction(tau) else 0.0 for v in ev_iou) if ev_iou else None
    prec = _mean(float(v) for v in ev_iou) if ev_iou else None

    sw = [ev for ev in seq.events if ev.kind.value == "switch" and gt[ev.t] is not None]
    resp_hits = []
    for ev in sw:
        new, old = fiou(ev.t, ev.gt_new.to_list()), fiou(ev.t, ev.gt_old.to_list())
        hit = new > old and (not require_overlap or new > Fraction(1, 2))
        resp_hits.append(1.0 if hit else 0.0)
    resp = _mean(resp_hits)

    starts = [ev.t for ev in seq.events] + [n]
    seg_means = []
    for k in range(len(starts) - 1):
        vals = [float(fiou(t)) for t in range(starts[k], starts[k + 1]) if gt[t] is not None]
        if vals:
            seg_means.append(_mean(vals))
    inter = _mean(seg_means)

    valid = [t for t in range(n) if gt[t] is not None]
    if not valid:
        return dict(interactive_score=inter, responsiveness=resp, perception_accuracy=acc,
                    perception_precision=prec, auc=None, precision=None, norm_precision=None, curves=None)
    ious = [fiou(t) for t in valid]
    success = []
    for th in np.linspace(0.0, 1.0, 21):
        th = Fraction(float(th))
        success.append(_mean(1.0 if (v >= th if inclusive else v > th) else 0.0 for v in ious))
    dists, ndists = [], []
    for t in valid:
        if pred_boxes[t] is None:
            dists.append(math.inf)
            ndists.append(math.inf)
            continue
        (px, py), (gx, gy) = _center(pred_boxes[t]), _center(gt[t])
        dists.append(math.sqrt((px - gx) ** 2 + (py - gy) ** 2))
        ndists.append(math.sqrt(((px - gx) / gt[t][2]) ** 2 + ((py - gy) / gt[t][3]) ** 2))
    precision = _mean(1.0 if d <= 20.0 else 0.0 for d in dists)
    prec_curve = [_mean(1.0 if d <= float(g) else 0.0 for d in dists) for g in np.linspace(0.0, 50.0, 51)]
    norm_curve = []
    for g in np.linspace(0.0, 0.5, 51):
        g = float(g)
        norm_curve.append(_mean(1.0 if (d <= g if inclusive else d < g) else 0.0 for d in ndists))
    return dict(
        interactive_score=inter,
        responsiveness=resp,
        perception_accuracy=acc,
        perception_precision=prec,
        auc=_mean(success),
        precision=precision,
        norm_precision=_mean(norm_curve),
        curves=dict(success=success, precision=prec_curve, norm_precision=norm_curve),
    )


def random_prediction_track(seq, rng):
    """Per frame: exact GT, jittered GT, another object's box, a random box, or absent."""
    out = []
    W, H = seq.size.width, seq.size.height
    oids = sorted(seq.objects) if seq.objects else []
    for t, fr in enumerate(seq.frames):
        r = rng.random()
        if r < 0.1:
            out.append(None)
        elif r < 0.3 and fr.box is not None:
            out.append(fr.box.to_list())
        elif r < 0.75 and fr.box is not None:
            b = fr.box.to_list()
            jit = rng.normal(0, [6, 6, 3, 3])
            out.append([b[0] + jit[0], b[1] + jit[1], max(0.5, b[2] + jit[2]), max(0.5, b[3] + jit[3])])
        elif r < 0.85 and oids:
            ob = seq.objects[oids[int(rng.integers(len(oids)))]][t]
            out.append(None if ob is None else ob.to_list())
        else:
            w, h = rng.uniform(5, 120), rng.uniform(5, 90)
            out.append([rng.uniform(0, W - w), rng.uniform(0, H - h), w, h])
    return out


def random_sequence(seed: int):
    """A seeded synthetic sequence of at most 200 frames with switches and occlusions."""
    from itrack.dataset import EventKind, Scenario
    from itrack.synth import ObjectSpec, ScriptedEvent, SynthSpec, synthesize

    rng = np.random.default_rng([seed, 4242])
    n = int(rng.integers(20, 201))
    kinds = ["linear", "sinusoidal", "piecewise-linear"]
    objects = []
    for _ in range(int(rng.integers(1, 5))):
        occ = ()
        if rng.random() < 0.6:
            a = int(rng.integers(0, n))
            occ = ((a, min(n - 1, a + int(rng.integers(0, 30)))),)
        objects.append(ObjectSpec(kinds[int(rng.integers(3))], occlusions=occ))
    ts = sorted(set(int(v) for v in rng.integers(1, n, size=int(rng.integers(0, 6)))))
    events, cur = [ScriptedEvent(0, EventKind.INIT, 0)], 0
    for t in ts:
        target = int(rng.integers(len(objects)))
        kind = EventKind.SWITCH if target != cur else [EventKind.CORRECTION, EventKind.REFINE][int(rng.integers(2))]
        events.append(ScriptedEvent(t, kind, target))
        cur = target
    scen = list(Scenario)[int(rng.integers(6))]
    return synthesize(
        SynthSpec(seed=seed, n_frames=n, objects=tuple(objects), events=tuple(events), name=f"rand_{seed:03d}", scenario=scen)
    )
