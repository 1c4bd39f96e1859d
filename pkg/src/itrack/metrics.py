"""Perception, responsiveness, tracking and interactiveness metrics.

Per-frame quantities are computed once as arrays (IoU, center error,
normalised center error) over the whole sequence; each metric is then a
reduction over the relevant frame subset. Frames whose ground truth is absent
never enter an average. A predicted absence against a present target scores
IoU 0 and an infinite center error.

Undefined metrics (no valid frame to average over) are reported as ``None``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence as Seq

import numpy as np

from .dataset import FrameAnnotation, Sequence
from .geometry import (
    BoundingBox,
    center_distance_many,
    iou,
    iou_many,
    normalized_center_distance_many,
)

SCALAR_NAMES = (
    "interactive_score",
    "responsiveness",
    "perception_accuracy",
    "perception_precision",
    "auc",
    "precision",
    "norm_precision",
)


class MetricError(ValueError):
    """Inputs that cannot be scored (e.g. predictions not covering the sequence)."""


@dataclass(frozen=True)
class FramePrediction:
    t: int
    box: BoundingBox | None

    @property
    def absent(self) -> bool:
        return self.box is None


def _grid(start: float, stop: float, n: int) -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(start, stop, n))


@dataclass(frozen=True)
class MetricConfig:
    tau_perception: float = 0.5
    success_thresholds: tuple[float, ...] = field(default_factory=lambda: _grid(0.0, 1.0, 21))
    precision_threshold_px: float = 20.0
    precision_grid_px: tuple[float, ...] = field(default_factory=lambda: _grid(0.0, 50.0, 51))
    norm_precision_grid: tuple[float, ...] = field(default_factory=lambda: _grid(0.0, 0.5, 51))
    require_switch_overlap: bool = False
    switch_overlap: float = 0.5
    # False: success counts IoU > θ and norm-precision counts error < g.
    inclusive_success: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_perception < 1.0:
            raise ValueError(f"tau_perception must lie in (0, 1), got {self.tau_perception}")
        for name in ("success_thresholds", "precision_grid_px", "norm_precision_grid"):
            grid = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, grid)
            if len(grid) == 0 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} must be non-empty and strictly increasing")
        if any(not 0.0 <= v <= 1.0 for v in self.success_thresholds):
            raise ValueError("success_thresholds must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "tau_perception": self.tau_perception,
            "success_thresholds": list(self.success_thresholds),
            "precision_threshold_px": self.precision_threshold_px,
            "precision_grid_px": list(self.precision_grid_px),
            "norm_precision_grid": list(self.norm_precision_grid),
            "require_switch_overlap": self.require_switch_overlap,
            "switch_overlap": self.switch_overlap,
            "inclusive_success": self.inclusive_success,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> MetricConfig:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class Segment:
    start: int
    stop: int  # exclusive
    valid: tuple[int, ...]  # frames in [start, stop) with ground truth present

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class SegmentSet:
    segments: tuple[Segment, ...]

    @property
    def K(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class Curves:
    success: tuple[float, ...]
    precision: tuple[float, ...]
    norm_precision: tuple[float, ...]


@dataclass(frozen=True)
class SequenceReport:
    name: str
    scenario: str
    interactive_score: float | None
    responsiveness: float | None
    perception_accuracy: float | None
    perception_precision: float | None
    auc: float | None
    precision: float | None
    norm_precision: float | None
    curves: Curves | None

    def scalars(self) -> dict[str, float | None]:
        return {k: getattr(self, k) for k in SCALAR_NAMES}


@dataclass(frozen=True)
class Summary:
    """Aggregated scalars and pointwise-mean curves over a group of sequences."""

    n_sequences: int
    interactive_score: float | None
    responsiveness: float | None
    perception_accuracy: float | None
    perception_precision: float | None
    auc: float | None
    precision: float | None
    norm_precision: float | None
    curves: Curves | None

    def scalars(self) -> dict[str, float | None]:
        return {k: getattr(self, k) for k in SCALAR_NAMES}


@dataclass(frozen=True)
class EvalReport:
    overall: Summary
    per_scenario: dict[str, Summary]
    sequences: tuple[SequenceReport, ...]
    config: MetricConfig

    def __getattr__(self, name: str):
        # expose overall scalars directly: report.auc, report.interactive_score, ...
        if name in SCALAR_NAMES or name == "curves":
            return getattr(self.overall, name)
        raise AttributeError(name)


# --- per-frame primitives -------------------------------------------------


def frame_iou(pred: FramePrediction, gt: FrameAnnotation) -> float | None:
    if pred.t != gt.t:
        raise MetricError(f"prediction for frame {pred.t} paired with ground truth for frame {gt.t}")
    if gt.box is None:
        return None
    if pred.box is None:
        return 0.0
    return iou(pred.box, gt.box)


def predictions_array(preds: Seq[FramePrediction], n_frames: int) -> np.ndarray:
    """``(n, 4)`` array with NaN rows for predicted absence."""
    if len(preds) != n_frames:
        raise MetricError(f"{len(preds)} predictions for a {n_frames}-frame sequence")
    out = np.full((n_frames, 4), np.nan)
    for i, p in enumerate(preds):
        if p.t != i:
            raise MetricError(f"prediction {i} has frame index {p.t}")
        if p.box is not None:
            out[i] = (p.box.x, p.box.y, p.box.w, p.box.h)
    return out


def _pair_iou(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """IoU per row; NaN where gt is absent, 0 where only the prediction is absent."""
    out = np.full(len(gt), np.nan)
    gt_ok = ~np.isnan(gt[:, 0])
    both = gt_ok & ~np.isnan(pred[:, 0])
    out[gt_ok] = 0.0
    if both.any():
        out[both] = iou_many(pred[both], gt[both])
    return out


def _as_array(preds, seq: Sequence) -> np.ndarray:
    if isinstance(preds, np.ndarray):
        if preds.shape != (seq.n_frames, 4):
            raise MetricError(f"prediction array shape {preds.shape} does not match {seq.n_frames} frames")
        return preds
    return predictions_array(preds, seq.n_frames)


def segment_by_prompts(seq: Sequence) -> SegmentSet:
    n = seq.n_frames
    starts = [ev.t for ev in seq.events]
    present = ~np.isnan(seq.gt_array[:, 0])
    segs = []
    for k, s in enumerate(starts):
        stop = starts[k + 1] if k + 1 < len(starts) else n
        valid = tuple(int(t) for t in np.flatnonzero(present[s:stop]) + s)
        segs.append(Segment(s, stop, valid))
    return SegmentSet(tuple(segs))


# --- metric suite ---------------------------------------------------------


def _event_ious(pred: np.ndarray, seq: Sequence, events, target: str) -> np.ndarray:
    ts = np.array([ev.t for ev in events], dtype=int)
    boxes = np.array([getattr(ev, target).to_list() for ev in events], dtype=float).reshape(-1, 4)
    return _pair_iou(pred[ts], boxes)


def _scored_events(seq: Sequence, events) -> list:
    return [ev for ev in events if seq.frames[ev.t].box is not None]


def perception(preds, seq: Sequence, cfg: MetricConfig | None = None) -> tuple[float | None, float | None]:
    """(accuracy, precision) at prompt frames, scored against each prompt's ``gt_new``."""
    cfg = cfg or MetricConfig()
    pred = _as_array(preds, seq)
    events = _scored_events(seq, seq.events)
    if not events:
        return None, None
    v = _event_ious(pred, seq, events, "gt_new")
    return float(np.mean(v > cfg.tau_perception)), float(np.mean(v))


def responsiveness(preds, seq: Sequence, cfg: MetricConfig | None = None) -> float | None:
    """Fraction of switch prompts whose prediction overlaps the new target more than the old one."""
    cfg = cfg or MetricConfig()
    pred = _as_array(preds, seq)
    events = _scored_events(seq, seq.switch_events())
    if not events:
        return None
    v_new = _event_ious(pred, seq, events, "gt_new")
    v_old = _event_ious(pred, seq, events, "gt_old")
    ok = v_new > v_old
    if cfg.require_switch_overlap:
        ok &= v_new > cfg.switch_overlap
    return float(np.mean(ok))


def _interactive_from_ious(frame_ious: np.ndarray, segments: SegmentSet) -> float | None:
    means = [float(np.mean(frame_ious[list(s.valid)])) for s in segments.segments if s.valid]
    if not means:
        return None
    return float(np.mean(means))


def interactive_score(preds, seq: Sequence) -> float | None:
    pred = _as_array(preds, seq)
    return _interactive_from_ious(_pair_iou(pred, seq.gt_array), segment_by_prompts(seq))


def tracking_metrics(
    preds, seq: Sequence, cfg: MetricConfig | None = None
) -> tuple[float | None, float | None, float | None, Curves | None]:
    """(auc, precision, norm_precision, curves) over all valid frames."""
    cfg = cfg or MetricConfig()
    pred = _as_array(preds, seq)
    return _tracking(pred, seq.gt_array, cfg)


def _tracking(pred: np.ndarray, gt: np.ndarray, cfg: MetricConfig):
    valid = ~np.isnan(gt[:, 0])
    if not valid.any():
        return None, None, None, None
    p, g = pred[valid], gt[valid]
    have = ~np.isnan(p[:, 0])
    ious = np.zeros(len(g))
    dist = np.full(len(g), np.inf)
    ndist = np.full(len(g), np.inf)
    if have.any():
        ious[have] = iou_many(p[have], g[have])
        dist[have] = center_distance_many(p[have], g[have])
        ndist[have] = normalized_center_distance_many(p[have], g[have])
    th = np.asarray(cfg.success_thresholds)
    ng = np.asarray(cfg.norm_precision_grid)
    if cfg.inclusive_success:
        success = (ious[:, None] >= th[None, :]).mean(axis=0)
        norm_curve = (ndist[:, None] <= ng[None, :]).mean(axis=0)
    else:
        success = (ious[:, None] > th[None, :]).mean(axis=0)
        norm_curve = (ndist[:, None] < ng[None, :]).mean(axis=0)
    prec_curve = (dist[:, None] <= np.asarray(cfg.precision_grid_px)[None, :]).mean(axis=0)
    precision = float(np.mean(dist <= cfg.precision_threshold_px))
    curves = Curves(tuple(map(float, success)), tuple(map(float, prec_curve)), tuple(map(float, norm_curve)))
    return float(np.mean(success)), precision, float(np.mean(norm_curve)), curves


def evaluate_sequence(preds, seq: Sequence, cfg: MetricConfig | None = None) -> SequenceReport:
    cfg = cfg or MetricConfig()
    pred = _as_array(preds, seq)
    acc, prec = perception(pred, seq, cfg)
    auc, precision, norm_prec, curves = _tracking(pred, seq.gt_array, cfg)
    return SequenceReport(
        name=seq.name,
        scenario=seq.scenario.value,
        interactive_score=interactive_score(pred, seq),
        responsiveness=responsiveness(pred, seq, cfg),
        perception_accuracy=acc,
        perception_precision=prec,
        auc=auc,
        precision=precision,
        norm_precision=norm_prec,
        curves=curves,
    )


def _mean_or_none(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    # fsum is exactly rounded, so the mean does not depend on arrival order
    return math.fsum(vals) / len(vals)


def summarize(reports: Seq[SequenceReport]) -> Summary:
    scal = {k: _mean_or_none(getattr(r, k) for r in reports) for k in SCALAR_NAMES}
    with_curves = [r.curves for r in reports if r.curves is not None]
    curves = None
    if with_curves:
        curves = Curves(
            *(
                tuple(math.fsum(col) / len(with_curves) for col in zip(*(getattr(c, f) for c in with_curves)))
                for f in ("success", "precision", "norm_precision")
            )
        )
    return Summary(n_sequences=len(reports), curves=curves, **scal)


def aggregate(reports: Seq[SequenceReport], cfg: MetricConfig | None = None) -> EvalReport:
    """Unweighted per-sequence means, overall and per scenario (scenario keys sorted)."""
    if not reports:
        raise MetricError("cannot aggregate an empty set of sequence reports")
    cfg = cfg or MetricConfig()
    groups: dict[str, list[SequenceReport]] = {}
    for r in reports:
        groups.setdefault(r.scenario, []).append(r)
    per = {k: summarize(groups[k]) for k in sorted(groups)}
    return EvalReport(overall=summarize(reports), per_scenario=per, sequences=tuple(reports), config=cfg)
