"""In-process synthetic trackers and grounders.

These are deterministic stand-ins for real models. Each is built for one
sequence and may read its ground truth and per-object geometry; randomness is
pre-drawn per frame from ``(seed, sequence name)`` so two runs that differ
only in policy see the same noise at the same frames.

Tracker interface (shared with the external-process adapter):

* ``init(t, box=None, text=None)``  first initialisation
* ``reset(t, box, text=None)``      re-initialise on a box, no reply
* ``prompt(t, text)``               forward a text prompt, returns the tracker's box
* ``predict(t, memory=None)``       box for frame ``t`` or ``None`` for absent
* ``close()``

Grounders expose ``ground(t, text)`` and ``close()``.
"""

from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from ..dataset import Sequence
from ..geometry import BoundingBox, center, iou
from ..memory import MemoryBank, score

Memory = tuple[MemoryBank, MemoryBank]


def sequence_rng(seq: Sequence, seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(seq.name.encode("utf-8")), stream])


def _oid_key(oid: str):
    return (0, int(oid)) if oid.isdigit() else (1, oid)


class SyntheticBackend:
    def __init__(self, seq: Sequence, seed: int = 0):
        self.seq = seq
        self.seed = seed

    def close(self) -> None:
        pass

    def prompt_box(self, t: int) -> BoundingBox | None:
        """What a perfect language grounder would return at ``t``."""
        ev = self.seq.event_index.get(t)
        if ev is not None:
            return ev.gt_new
        return self.seq.frames[t].box

    # object geometry; without an object map the ground truth is the only object
    def object_ids(self) -> list[str]:
        if self.seq.objects is None:
            return ["gt"]
        return sorted(self.seq.objects, key=_oid_key)

    def object_box(self, oid: str, t: int) -> BoundingBox | None:
        if self.seq.objects is None:
            return self.seq.frames[t].box
        return self.seq.objects[oid][t]

    def match_object(self, t: int, box: BoundingBox) -> str | None:
        best, best_iou = None, 0.0
        for oid in self.object_ids():
            ob = self.object_box(oid, t)
            if ob is not None:
                v = iou(box, ob)
                if v > best_iou:
                    best, best_iou = oid, v
        return best

    def feature(self, oid: str, t: int) -> np.ndarray | None:
        feats = self.seq.features
        if not feats or oid not in feats:
            return None
        v = np.asarray(feats[oid][t], dtype=float)
        return v / np.linalg.norm(v)


class OracleTracker(SyntheticBackend):
    """Returns the annotated ground truth whatever it is told."""

    def init(self, t, box=None, text=None):
        pass

    def reset(self, t, box, text=None):
        pass

    def prompt(self, t, text):
        return self.prompt_box(t)

    def predict(self, t, memory=None):
        return self.seq.frames[t].box


class NoisyTracker(SyntheticBackend):
    """Ground truth with Gaussian center jitter of ``sigma`` pixels per axis."""

    def __init__(self, seq, seed=0, sigma: float = 2.0):
        super().__init__(seq, seed)
        self.sigma = float(sigma)
        self._noise = sequence_rng(seq, seed, 1).standard_normal((seq.n_frames, 2)) * self.sigma
        self._anchor: tuple[int, BoundingBox] | None = None

    def init(self, t, box=None, text=None):
        box = box if box is not None else self.prompt_box(t)
        self._anchor = (t, box) if box is not None else None

    reset = init

    def prompt(self, t, text):
        self.init(t, None, text)
        return self.prompt_box(t)

    def predict(self, t, memory=None):
        if self._anchor is not None and self._anchor[0] == t:
            return self._anchor[1]
        gt = self.seq.frames[t].box
        if gt is None:
            return None
        if self.sigma == 0:
            return gt
        dx, dy = self._noise[t]
        return gt.translate(float(dx), float(dy))


class DriftTracker(SyntheticBackend):
    """Follows the object it was initialised on, and drifts.

    Drift comes in three flavours, combinable:

    * ``freeze_after=k``: follow for ``k`` frames after (re)initialisation, then
      stop updating (``0`` means the box never moves);
    * ``velocity_bias=(vx, vy)``: an offset growing by that many pixels per frame;
    * ``hop_probability=p``: each frame, with probability ``p``, jump to a
      randomly chosen other visible object. When memory banks are supplied the
      jump only happens if the candidate scores at least as well as the current
      object under ``memory.score`` (so a populated memory suppresses it).
    """

    def __init__(
        self,
        seq,
        seed=0,
        freeze_after: int | None = None,
        velocity_bias=(0.0, 0.0),
        hop_probability: float = 0.0,
        lam: float = 1.0,
    ):
        super().__init__(seq, seed)
        self.freeze_after = None if freeze_after is None else int(freeze_after)
        self.velocity_bias = (float(velocity_bias[0]), float(velocity_bias[1]))
        self.hop_probability = float(hop_probability)
        self.lam = float(lam)
        rng = sequence_rng(seq, seed, 2)
        self._hop_u = rng.random(seq.n_frames)
        self._hop_pick = rng.random(seq.n_frames)
        self._oid: str | None = None
        self._t0 = 0
        self._offset = (0.0, 0.0)
        self._size = (0.0, 0.0)
        self._last: BoundingBox | None = None

    def init(self, t, box=None, text=None):
        box = box if box is not None else self.prompt_box(t)
        if box is None:
            self._oid, self._last = None, None
            return
        self._t0 = t
        self._last = box
        self._oid = self.match_object(t, box)
        if self._oid is not None:
            ob = self.object_box(self._oid, t)
            self._offset = (box.x - ob.x, box.y - ob.y)
        self._size = (box.w, box.h)

    def reset(self, t, box, text=None):
        self.init(t, box, text)

    def prompt(self, t, text):
        self.init(t, None, text)
        return self._last

    def _frozen(self, t: int) -> bool:
        return self.freeze_after is not None and t - self._t0 > self.freeze_after

    def _maybe_hop(self, t: int, memory: Memory | None) -> None:
        if self.hop_probability <= 0 or self._hop_u[t] >= self.hop_probability:
            return
        others = [o for o in self.object_ids() if o != self._oid and self.object_box(o, t) is not None]
        if not others:
            return
        cand = others[min(int(self._hop_pick[t] * len(others)), len(others) - 1)]
        if memory is not None and self._oid is not None:
            f_cand, f_cur = self.feature(cand, t), self.feature(self._oid, t)
            if f_cand is not None and f_cur is not None:
                pos, neg = memory
                if score(f_cand, pos, neg, self.lam) < score(f_cur, pos, neg, self.lam):
                    return
        self._oid = cand
        self._offset = (0.0, 0.0)
        ob = self.object_box(cand, t)
        self._size = (ob.w, ob.h)

    def predict(self, t, memory=None):
        if self._last is None:
            return None
        if t == self._t0 or self._oid is None or self._frozen(t):
            return self._last
        self._maybe_hop(t, memory)
        ob = self.object_box(self._oid, t)
        if ob is None:
            return None
        k = t - self._t0
        box = BoundingBox(
            ob.x + self._offset[0] + self.velocity_bias[0] * k,
            ob.y + self._offset[1] + self.velocity_bias[1] * k,
            self._size[0],
            self._size[1],
        )
        self._last = box
        return box


class MemoryAwareTracker(SyntheticBackend):
    """Picks, each frame, the visible object that memory prefers.

    Candidates are the boxes of all visible objects. With memory banks, the
    candidate with the highest ``memory.score`` wins; ties (and the no-memory
    case) go to the candidate overlapping the previous box most, then the
    nearest center, then the lowest object id.
    """

    def __init__(self, seq, seed=0, lam: float = 1.0):
        super().__init__(seq, seed)
        self.lam = float(lam)
        self._prev: BoundingBox | None = None
        self._t0 = -1

    def init(self, t, box=None, text=None):
        self._prev = box if box is not None else self.prompt_box(t)
        self._t0 = t

    def reset(self, t, box, text=None):
        self.init(t, box, text)

    def prompt(self, t, text):
        self.init(t, None, text)
        return self._prev

    def candidates(self, t: int) -> list[tuple[str, BoundingBox]]:
        return [(o, b) for o in self.object_ids() if (b := self.object_box(o, t)) is not None]

    def choose(self, t: int, memory: Memory | None) -> tuple[str, BoundingBox] | None:
        cands = self.candidates(t)
        if not cands:
            return None
        prev = self._prev

        def continuity(item):
            oid, b = item
            if prev is None:
                return (0.0, 0.0)
            (px, py), (cx, cy) = center(prev), center(b)
            return (iou(prev, b), -((px - cx) ** 2 + (py - cy) ** 2))

        keyed = []
        for idx, item in enumerate(cands):
            s = 0.0
            if memory is not None:
                f = self.feature(item[0], t)
                if f is not None:
                    s = round(score(f, memory[0], memory[1], self.lam), 12)
            keyed.append(((s, *continuity(item), -idx), item))
        return max(keyed, key=lambda kv: kv[0])[1]

    def predict(self, t, memory=None):
        if self._prev is None:
            return None
        if t == self._t0:
            return self._prev
        picked = self.choose(t, memory)
        if picked is None:
            return None
        self._prev = picked[1]
        return picked[1]


class ScriptedGrounder(SyntheticBackend):
    """Returns the prompted target's box, optionally noisy or wrong.

    ``center_noise`` is the Gaussian jitter (px) applied to the box center;
    with probability ``failure_probability`` the grounder instead returns an
    off-target box of the same size, parked in the frame corner farthest from
    the target.
    """

    def __init__(self, seq, seed=0, center_noise: float = 0.0, failure_probability: float = 0.0):
        super().__init__(seq, seed)
        self.center_noise = float(center_noise)
        self.failure_probability = float(failure_probability)
        rng = sequence_rng(seq, seed, 3)
        self._noise = rng.standard_normal((seq.n_frames, 2)) * self.center_noise
        self._fail = rng.random(seq.n_frames)

    def off_target(self, box: BoundingBox) -> BoundingBox:
        W, H = self.seq.size.width, self.seq.size.height
        cx, cy = center(box)
        x = 0.0 if cx > W / 2 else max(0.0, W - box.w)
        y = 0.0 if cy > H / 2 else max(0.0, H - box.h)
        return BoundingBox(x, y, box.w, box.h)

    def ground(self, t: int, text: str) -> BoundingBox | None:
        box = self.prompt_box(t)
        if box is None:
            return None
        if self._fail[t] < self.failure_probability:
            return self.off_target(box)
        if self.center_noise > 0:
            dx, dy = self._noise[t]
            return box.translate(float(dx), float(dy))
        return box


TRACKERS: dict[str, Callable[..., SyntheticBackend]] = {
    "oracle": OracleTracker,
    "noisy": NoisyTracker,
    "drift": DriftTracker,
    "memory-aware": MemoryAwareTracker,
}

GROUNDERS: dict[str, Callable[..., SyntheticBackend]] = {
    "scripted": ScriptedGrounder,
}
