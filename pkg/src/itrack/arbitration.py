"""Keep-or-reinitialise arbitration between the tracker and the grounder.

``arbitrate`` is a pure decision: it compares the two boxes by IoU against the
phase threshold and returns the final box plus the memory inserts the caller
should apply. ``detect_drift`` flags a jump of the tracker's box center
between consecutive frames.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import BoundingBox, FrameSize, center_distance, iou
from .memory import Polarity


class ArbitrationConfigError(ValueError):
    pass


class Ablation(str, enum.Enum):
    IPM = "no-ipm"
    MEMORY = "no-memory"
    CAM = "no-cam"
    NAIVE_IOU = "naive-iou"

    @classmethod
    def parse(cls, name: str) -> Ablation:
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(a.value for a in cls)
            raise ArbitrationConfigError(f"unknown ablation {name!r} (expected one of: {valid})") from None


class Phase(str, enum.Enum):
    INIT = "init"
    RUNTIME = "runtime"


class Action(str, enum.Enum):
    KEEP = "keep"
    REINIT = "reinit"


@dataclass(frozen=True)
class ArbitrationConfig:
    tau_init: float = 0.3
    tau_reinit: float = 0.6
    delta_c: float = 0.1  # fraction of the frame diagonal
    ablation: frozenset[Ablation] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_init <= self.tau_reinit < 1.0:
            raise ArbitrationConfigError(
                f"need 0 < tau_init <= tau_reinit < 1, got tau_init={self.tau_init}, tau_reinit={self.tau_reinit}"
            )
        if not 0.0 < self.delta_c <= 1.0:
            raise ArbitrationConfigError(f"delta_c must lie in (0, 1], got {self.delta_c}")
        object.__setattr__(self, "ablation", frozenset(Ablation(a) for a in self.ablation))

    def disabled(self, component: Ablation) -> bool:
        return component in self.ablation

    def threshold(self, phase: Phase) -> float:
        # the naive variant has no phase awareness: one threshold everywhere
        if phase is Phase.INIT and not self.disabled(Ablation.NAIVE_IOU):
            return self.tau_init
        return self.tau_reinit

    def to_dict(self) -> dict:
        return {
            "tau_init": self.tau_init,
            "tau_reinit": self.tau_reinit,
            "delta_c": self.delta_c,
            "ablation": sorted(a.value for a in self.ablation),
        }


@dataclass(frozen=True)
class MemoryOp:
    polarity: Polarity
    embedding: np.ndarray


@dataclass(frozen=True)
class ArbitrationDecision:
    action: Action
    final_box: BoundingBox
    memory_ops: tuple[MemoryOp, ...]
    iou: float
    tau: float | None  # None when the comparison was bypassed

    @property
    def reinit_box(self) -> BoundingBox | None:
        return self.final_box if self.action is Action.REINIT else None


def detect_drift(prev_box: BoundingBox, cur_box: BoundingBox, frame: FrameSize, cfg: ArbitrationConfig) -> bool:
    """True iff the center moved strictly more than ``delta_c`` of the frame diagonal."""
    return center_distance(prev_box, cur_box) > cfg.delta_c * frame.diagonal


def _ops(*pairs: tuple[Polarity, np.ndarray | None]) -> tuple[MemoryOp, ...]:
    return tuple(MemoryOp(p, e) for p, e in pairs if e is not None)


def arbitrate(
    b_track: BoundingBox,
    b_ipm: BoundingBox,
    embeddings: tuple[np.ndarray | None, np.ndarray | None],
    cfg: ArbitrationConfig,
    phase: Phase,
) -> ArbitrationDecision:
    """Decide between the tracker box and the grounded box.

    IoU below the phase threshold re-initialises on the grounded box, records
    the tracker's embedding as negative and the grounded one as positive;
    otherwise the tracker box is kept and its embedding reinforces the positive
    bank. Equality keeps. ``embeddings`` is ``(track_embed, ipm_embed)``; a
    ``None`` entry just drops its memory op.

    With the arbitration module ablated the grounded box is applied
    unconditionally and nothing is remembered. The naive and no-memory
    variants keep the decision but emit no memory ops.
    """
    if not isinstance(phase, Phase):
        raise ArbitrationConfigError(f"invalid phase {phase!r}")
    if not isinstance(cfg, ArbitrationConfig):
        raise ArbitrationConfigError(f"invalid config {cfg!r}")
    overlap = iou(b_track, b_ipm)
    if cfg.disabled(Ablation.CAM):
        return ArbitrationDecision(Action.REINIT, b_ipm, (), overlap, None)
    tau = cfg.threshold(phase)
    track_embed, ipm_embed = embeddings
    remember = not (cfg.disabled(Ablation.MEMORY) or cfg.disabled(Ablation.NAIVE_IOU))
    if overlap < tau:
        ops = _ops((Polarity.NEGATIVE, track_embed), (Polarity.POSITIVE, ipm_embed)) if remember else ()
        return ArbitrationDecision(Action.REINIT, b_ipm, ops, overlap, tau)
    ops = _ops((Polarity.POSITIVE, track_embed)) if remember else ()
    return ArbitrationDecision(Action.KEEP, b_track, ops, overlap, tau)


def parse_ablations(names: Iterable[str]) -> frozenset[Ablation]:
    return frozenset(Ablation.parse(n) for n in names)
