"""Axis-aligned box arithmetic.

Boxes are ``(x, y, w, h)`` with a top-left origin and real-valued coordinates.
Scalar helpers operate on :class:`BoundingBox`; the ``*_many`` variants take
``(n, 4)`` arrays and are what the metric code uses on long sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np


class InvalidGeometryError(ValueError):
    """A box or frame size violates its invariants."""


class DegenerateGroundTruthError(ValueError):
    """A ground-truth box has zero width or height where a positive one is needed."""


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError) as exc:
                raise InvalidGeometryError(f"box field {name}={value!r} is not a number") from exc
            if not math.isfinite(value):
                raise InvalidGeometryError(f"box field {name}={value!r} is not finite")
            object.__setattr__(self, name, value)
        if self.w < 0 or self.h < 0:
            raise InvalidGeometryError(f"box has negative size: w={self.w}, h={self.h}")

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
        return cls(x1, y1, x2 - x1, y2 - y1)

    @classmethod
    def from_list(cls, values: Iterable[float]) -> BoundingBox:
        vals = list(values)
        if len(vals) != 4:
            raise InvalidGeometryError(f"box needs 4 values, got {len(vals)}")
        return cls(*vals)

    def to_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @property
    def area(self) -> float:
        return self.w * self.h

    def translate(self, dx: float, dy: float) -> BoundingBox:
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def scale(self, s: float) -> BoundingBox:
        """Scale about the origin (coordinates and size alike)."""
        if not s > 0:
            raise InvalidGeometryError(f"scale factor must be positive, got {s}")
        return BoundingBox(self.x * s, self.y * s, self.w * s, self.h * s)


@dataclass(frozen=True)
class FrameSize:
    width: int
    height: int

    def __post_init__(self) -> None:
        for name in ("width", "height"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value <= 0:
                raise InvalidGeometryError(f"frame {name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, box: BoundingBox) -> bool:
        """True when the box lies inside the frame; touching an edge counts as inside."""
        return box.x >= 0 and box.y >= 0 and box.x + box.w <= self.width and box.y + box.h <= self.height


def _overlap(a0: float, aw: float, b0: float, bw: float) -> float:
    a1, b1 = a0 + aw, b0 + bw
    # a nested interval overlaps by its own extent; using it directly keeps iou(a, a) == 1 exact
    a_in_b = b0 <= a0 and a1 <= b1
    b_in_a = a0 <= b0 and b1 <= a1
    if a_in_b and b_in_a:
        # same float endpoints, extents below the coordinates' ulp
        return min(aw, bw)
    if a_in_b:
        return aw
    if b_in_a:
        return bw
    return min(a1, b1) - max(a0, b0)


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    iw = _overlap(a.x, a.w, b.x, b.w)
    ih = _overlap(a.y, a.h, b.y, b.h)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0.0 when the union is empty."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    # clamp guards the last ulp when inter ~ union
    return min(1.0, max(0.0, inter / union))


def center(a: BoundingBox) -> tuple[float, float]:
    return (a.x + a.w / 2.0, a.y + a.h / 2.0)


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    ax, ay = center(a)
    bx, by = center(b)
    return math.hypot(ax - bx, ay - by)


def normalized_center_distance(pred: BoundingBox, gt: BoundingBox) -> float:
    """Center offset scaled per axis by the ground-truth width and height."""
    if gt.w <= 0 or gt.h <= 0:
        raise DegenerateGroundTruthError(f"ground truth {gt} has zero area")
    px, py = center(pred)
    gx, gy = center(gt)
    return math.hypot((px - gx) / gt.w, (py - gy) / gt.h)


# --- vectorised forms -----------------------------------------------------


def _overlap_many(a0, aw, b0, bw):
    a1, b1 = a0 + aw, b0 + bw
    a_in_b = (b0 <= a0) & (a1 <= b1)
    b_in_a = (a0 <= b0) & (b1 <= a1)
    out = np.minimum(a1, b1) - np.maximum(a0, b0)
    out = np.where(b_in_a, bw, out)
    out = np.where(a_in_b, aw, out)
    return np.where(a_in_b & b_in_a, np.minimum(aw, bw), out)


def iou_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of two ``(n, 4)`` xywh arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    iw = _overlap_many(a[:, 0], a[:, 2], b[:, 0], b[:, 2])
    ih = _overlap_many(a[:, 1], a[:, 3], b[:, 1], b[:, 3])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.clip(out, 0.0, 1.0)


def centers_many(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, :2] + a[:, 2:] / 2.0


def center_distance_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = centers_many(a) - centers_many(b)
    return np.hypot(d[:, 0], d[:, 1])


def normalized_center_distance_many(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt, dtype=float)
    if np.any((gt[:, 2] <= 0) | (gt[:, 3] <= 0)):
        raise DegenerateGroundTruthError("ground truth contains a zero-area box")
    d = centers_many(pred) - centers_many(gt)
    return np.hypot(d[:, 0] / gt[:, 2], d[:, 1] / gt[:, 3])
