"""The evaluation loop: replay a sequence's prompts against tracker backends.

``run`` drives one sequence frame by frame under an :class:`EvalPolicy` and
returns a :class:`RunRecord`; ``run_suite`` fans sequences out over worker
processes and folds the per-sequence reports into an :class:`EvalReport`.
"""

from __future__ import annotations

import enum
import inspect
import json
import logging
import shlex
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any
from urllib.parse import parse_qsl

from ..arbitration import Ablation, Action, ArbitrationConfig, Phase, arbitrate, detect_drift
from ..dataset import EventKind, InteractionEvent, Sequence, validate
from ..geometry import BoundingBox
from ..memory import GeometricEmbedder, MemoryBank, MemoryEntry, Polarity, new_bank_pair
from ..metrics import EvalReport, FramePrediction, MetricConfig, SequenceReport, aggregate, evaluate_sequence
from .backends import GROUNDERS, TRACKERS
from .protocol import BackendCrashed, ExternalGrounder, ExternalTracker

log = logging.getLogger(__name__)


class HarnessError(Exception):
    """Bad configuration or input detected before or while running."""


class Mode(str, enum.Enum):
    GT_REINIT = "gt-reinit"
    TEXT_FORWARD = "text-forward"
    FIRST_BOX_ONLY = "first-box-only"
    IMAT = "imat"


class PromptEffect(str, enum.Enum):
    SAME_FRAME = "same-frame"
    NEXT_FRAME = "next-frame"


DEFAULT_PROMPT_EFFECT = {
    Mode.GT_REINIT: PromptEffect.NEXT_FRAME,
    Mode.FIRST_BOX_ONLY: PromptEffect.NEXT_FRAME,
    Mode.TEXT_FORWARD: PromptEffect.SAME_FRAME,
    Mode.IMAT: PromptEffect.SAME_FRAME,
}

FIRST_BOX_SUBPOLICIES = ("gt-reinit", "ignore")


@dataclass(frozen=True)
class EvalPolicy:
    mode: Mode = Mode.IMAT
    prompt_effect: PromptEffect | None = None  # None picks the mode's default
    arbitration: ArbitrationConfig = field(default_factory=ArbitrationConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    first_box_subpolicy: str = "gt-reinit"
    memory_capacity: int = 16
    novelty_epsilon: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        try:
            mode = Mode(self.mode)
        except ValueError:
            raise HarnessError(f"unknown mode {self.mode!r}") from None
        object.__setattr__(self, "mode", mode)
        effect = DEFAULT_PROMPT_EFFECT[mode] if self.prompt_effect is None else self.prompt_effect
        try:
            object.__setattr__(self, "prompt_effect", PromptEffect(effect))
        except ValueError:
            raise HarnessError(f"unknown prompt effect {effect!r}") from None
        if self.first_box_subpolicy not in FIRST_BOX_SUBPOLICIES:
            raise HarnessError(f"first_box_subpolicy must be one of {FIRST_BOX_SUBPOLICIES}")
        if mode is not Mode.IMAT and self.arbitration.ablation:
            raise HarnessError("ablations only apply to mode imat")

    @property
    def needs_grounder(self) -> bool:
        return self.mode is Mode.IMAT and not self.arbitration.disabled(Ablation.IPM)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "prompt_effect": self.prompt_effect.value,
            "arbitration": self.arbitration.to_dict(),
            "metric": self.metric.to_dict(),
            "first_box_subpolicy": self.first_box_subpolicy,
            "memory_capacity": self.memory_capacity,
            "novelty_epsilon": self.novelty_epsilon,
            "seed": self.seed,
        }


# --- backend handles --------------------------------------------------------


@dataclass(frozen=True)
class BackendSpec:
    """How to build a backend for one sequence.

    Textual form: ``synthetic:<name>`` optionally followed by ``?key=value&...``
    (values are JSON-decoded when possible, so ``sigma=2.5`` is a float and
    ``velocity_bias=[1,0]`` a list), or ``exec:<command line>``.
    """

    role: str  # "tracker" or "grounder"
    transport: str  # "synthetic" or "exec"
    target: str
    params: tuple[tuple[str, Any], ...] = ()

    @classmethod
    def parse(cls, text: str, role: str) -> BackendSpec:
        registry = TRACKERS if role == "tracker" else GROUNDERS
        transport, sep, rest = text.partition(":")
        if not sep or not rest:
            raise HarnessError(f"{role} {text!r}: expected synthetic:<name> or exec:<command>")
        if transport == "exec":
            if not shlex.split(rest):
                raise HarnessError(f"{role} {text!r}: empty command")
            return cls(role, "exec", rest)
        if transport != "synthetic":
            raise HarnessError(f"{role} {text!r}: unknown transport {transport!r}")
        name, _, query = rest.partition("?")
        if name not in registry:
            raise HarnessError(f"unknown synthetic {role} {name!r} (available: {', '.join(sorted(registry))})")
        params = []
        accepted = set(inspect.signature(registry[name]).parameters) - {"seq", "seed"}
        for key, raw in parse_qsl(query, keep_blank_values=True, strict_parsing=bool(query)):
            if key not in accepted:
                raise HarnessError(f"synthetic {role} {name!r} has no parameter {key!r}")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            params.append((key, value))
        return cls(role, "synthetic", name, tuple(sorted(params)))

    def __str__(self) -> str:
        if self.transport == "exec":
            return f"exec:{self.target}"
        if not self.params:
            return f"synthetic:{self.target}"
        return f"synthetic:{self.target}?" + "&".join(f"{k}={json.dumps(v)}" for k, v in self.params)

    def create(self, seq: Sequence, seed: int, mode: Mode | None = None):
        if self.transport == "exec":
            if self.role == "tracker":
                return ExternalTracker(seq, self.target, expects_prompt_reply=mode is Mode.TEXT_FORWARD)
            return ExternalGrounder(seq, self.target)
        registry = TRACKERS if self.role == "tracker" else GROUNDERS
        try:
            return registry[self.target](seq, seed, **dict(self.params))
        except (TypeError, ValueError) as exc:
            raise HarnessError(f"cannot build {self}: {exc}") from exc


# --- run records ------------------------------------------------------------


@dataclass
class RunRecord:
    sequence: str
    scenario: str
    n_frames: int
    predictions: list[FramePrediction]
    trace: list[dict]
    memory: dict | None
    policy: dict
    duration_s: float
    failed: bool = False
    error: str | None = None
    report: SequenceReport | None = None


def _box(b: BoundingBox | None) -> list[float] | None:
    return None if b is None else b.to_list()


class _Session:
    """Mutable state of one sequence evaluation."""

    def __init__(self, seq: Sequence, tracker, grounder, policy: EvalPolicy):
        self.seq = seq
        self.tracker = tracker
        self.grounder = grounder
        self.policy = policy
        self.cfg = policy.arbitration
        self.trace: list[dict] = []
        self.embed = GeometricEmbedder(seq)
        self.banks: tuple[MemoryBank, MemoryBank] | None = None
        remembers = not any(
            self.cfg.disabled(a) for a in (Ablation.IPM, Ablation.MEMORY, Ablation.CAM, Ablation.NAIVE_IOU)
        )
        if policy.mode is Mode.IMAT and remembers and self.embed.available:
            self.banks = new_bank_pair(policy.memory_capacity, policy.novelty_epsilon, self.embed.dim)
        self.latest_text = ""

    def predict(self, t: int) -> BoundingBox | None:
        return self.tracker.predict(t, self.banks)

    # Imat: ground, arbitrate, remember, maybe re-init
    def consult(
        self,
        t: int,
        text: str,
        b_track: BoundingBox | None,
        phase: Phase,
        cause: str,
        grounded: tuple[BoundingBox | None] | None = None,
    ) -> BoundingBox | None:
        b_ipm = grounded[0] if grounded is not None else self.grounder.ground(t, text)
        entry: dict[str, Any] = {
            "t": t,
            "cause": cause,
            "phase": phase.value,
            "b_track": _box(b_track),
            "b_ipm": _box(b_ipm),
        }
        self.trace.append(entry)
        if b_ipm is None:
            entry.update(action=Action.KEEP.value, final=_box(b_track), note="grounder returned no box")
            return b_track
        if b_track is None:
            self.tracker.reset(t, b_ipm, text)
            entry.update(action=Action.REINIT.value, final=_box(b_ipm), note="tracker lost the target")
            return b_ipm
        embeds = (self.embed(t, b_track), self.embed(t, b_ipm)) if self.banks is not None else (None, None)
        dec = arbitrate(b_track, b_ipm, embeds, self.cfg, phase)
        inserts = []
        if self.banks is not None:
            for op in dec.memory_ops:
                bank = self.banks[0] if op.polarity is Polarity.POSITIVE else self.banks[1]
                outcome = bank.insert(MemoryEntry.normalized(op.embedding, t, op.polarity))
                inserts.append([op.polarity.value, outcome.status.value])
        if dec.action is Action.REINIT:
            self.tracker.reset(t, b_ipm, text)
        entry.update(action=dec.action.value, iou=dec.iou, tau=dec.tau, final=_box(dec.final_box), memory=inserts)
        if self.banks is not None:
            entry["bank_sizes"] = [len(self.banks[0]), len(self.banks[1])]
        return dec.final_box

    def _note(self, t: int, cause: str, action: str, **extra) -> None:
        self.trace.append({"t": t, "cause": cause, "action": action, **extra})

    def init(self, ev: InteractionEvent) -> BoundingBox | None:
        # the first prompt is always applied before frame 0 is predicted
        t, mode = ev.t, self.policy.mode
        if mode is Mode.TEXT_FORWARD:
            self.tracker.init(t, text=ev.text)
            self._note(t, "init", "init")
            return self.predict(t)
        if not self.policy.needs_grounder:
            self.tracker.init(t, box=ev.gt_new, text=ev.text)
            self._note(t, "init", "init", final=_box(ev.gt_new))
            return self.predict(t)
        b_ipm = self.grounder.ground(t, ev.text)
        self.tracker.init(t, box=b_ipm, text=ev.text)
        b_track = self.predict(t)
        if self.cfg.disabled(Ablation.CAM):
            final = b_ipm if b_ipm is not None else b_track
            self._note(t, "init", "init", final=_box(final))
            return final
        return self.consult(t, ev.text, b_track, Phase.INIT, "init", grounded=(b_ipm,))

    def _resets_on_gt(self) -> bool:
        if self.policy.mode is Mode.GT_REINIT:
            return True
        return self.policy.mode is Mode.FIRST_BOX_ONLY and self.policy.first_box_subpolicy == "gt-reinit"

    def _apply(self, ev: InteractionEvent, b_track: BoundingBox | None) -> BoundingBox | None:
        """Apply a later prompt given the tracker's box; returns the box carried forward."""
        t, mode, cause = ev.t, self.policy.mode, ev.kind.value
        if mode is Mode.IMAT:
            if self.policy.needs_grounder:
                return self.consult(t, ev.text, b_track, Phase.RUNTIME, cause)
            return b_track
        if mode is Mode.TEXT_FORWARD:
            reply = self.tracker.prompt(t, ev.text)
            self._note(t, cause, "prompt", reply=_box(reply))
            return reply if reply is not None else b_track
        if self._resets_on_gt():
            self.tracker.reset(t, ev.gt_new, ev.text)
            self._note(t, cause, "reinit", final=_box(ev.gt_new))
            return ev.gt_new
        return b_track

    def event(self, ev: InteractionEvent, same_frame: bool) -> tuple[BoundingBox | None, BoundingBox | None]:
        """``(scored box, carried box)`` for a prompt frame after the first."""
        self.latest_text = ev.text
        if not same_frame:
            b_track = self.predict(ev.t)
            return b_track, self._apply(ev, b_track)
        if self.policy.mode is Mode.IMAT:
            box = self._apply(ev, self.predict(ev.t))
        else:
            # backends that take the prompt directly see it before the frame
            self._apply(ev, None)
            box = self.predict(ev.t)
        return box, box

    def step(self, t: int, prev: BoundingBox | None) -> BoundingBox | None:
        """A frame without a prompt; Imat re-verifies when the box jumps."""
        b_track = self.predict(t)
        if self.policy.mode is not Mode.IMAT or self.cfg.disabled(Ablation.CAM):
            return b_track
        if prev is not None and b_track is not None and detect_drift(prev, b_track, self.seq.size, self.cfg):
            if not self.policy.needs_grounder:
                # nothing to re-verify against
                self._note(t, "drift", "ignored", b_track=_box(b_track))
                return b_track
            return self.consult(t, self.latest_text, b_track, Phase.RUNTIME, "drift")
        return b_track


def run(seq: Sequence, tracker, grounder, policy: EvalPolicy) -> RunRecord:
    """Evaluate one sequence. Handles are used, not closed.

    A :class:`~itrack.harness.protocol.ProtocolError` propagates; a crashed
    backend yields a partial record with ``failed`` set.
    """
    if policy.needs_grounder and grounder is None:
        raise HarnessError("mode imat needs a grounder")
    s = _Session(seq, tracker, grounder, policy)
    same_frame = policy.prompt_effect is PromptEffect.SAME_FRAME
    preds: list[FramePrediction] = []
    failed, error = False, None
    started = time.perf_counter()
    carried: BoundingBox | None = None
    try:
        for t in range(seq.n_frames):
            ev = seq.event_index.get(t)
            if ev is not None and ev.kind is EventKind.INIT:
                s.latest_text = ev.text
                box = carried = s.init(ev)
            elif ev is not None:
                box, carried = s.event(ev, same_frame)
            else:
                box = carried = s.step(t, carried)
            preds.append(FramePrediction(t, box))
    except BackendCrashed as exc:
        failed, error = True, str(exc)
        log.error("%s: %s", seq.name, exc)
    memory = None
    if s.banks is not None:
        memory = {"positive": s.banks[0].snapshot(), "negative": s.banks[1].snapshot()}
    return RunRecord(
        sequence=seq.name,
        scenario=seq.scenario.value,
        n_frames=seq.n_frames,
        predictions=preds,
        trace=s.trace,
        memory=memory,
        policy=policy.to_dict(),
        duration_s=time.perf_counter() - started,
        failed=failed,
        error=error,
    )



def _close(handle) -> None:
    if handle is not None:
        try:
            handle.close()
        except Exception:  # a dying backend must not mask the run's own outcome
            log.debug("error while closing backend", exc_info=True)


def run_one(seq: Sequence, tracker: BackendSpec, grounder: BackendSpec | None, policy: EvalPolicy) -> RunRecord:
    """Fresh backend sessions, one run, and the sequence's metric report."""
    t_handle = g_handle = None
    try:
        t_handle = tracker.create(seq, policy.seed, policy.mode)
        if grounder is not None and policy.needs_grounder:
            g_handle = grounder.create(seq, policy.seed, policy.mode)
        record = run(seq, t_handle, g_handle, policy)
    except BackendCrashed as exc:
        # the backend never came up
        record = RunRecord(seq.name, seq.scenario.value, seq.n_frames, [], [], None, policy.to_dict(), 0.0, True, str(exc))
    finally:
        _close(t_handle)
        _close(g_handle)
    if not record.failed:
        record.report = evaluate_sequence(record.predictions, seq, policy.metric)
    return record


def _run_packed(args) -> RunRecord:
    return run_one(*args)


def run_suite(
    sequences: list[Sequence],
    tracker: BackendSpec,
    grounder: BackendSpec | None,
    policy: EvalPolicy,
    parallelism: int = 1,
) -> tuple[list[RunRecord], EvalReport | None]:
    """Run every sequence and aggregate; records come back in input order.

    The report covers the sequences that completed and is ``None`` when none
    did. Results do not depend on ``parallelism``.
    """
    if not sequences:
        raise HarnessError("no sequences to evaluate")
    if parallelism < 1:
        raise HarnessError(f"parallelism must be >= 1, got {parallelism}")
    if policy.needs_grounder and grounder is None:
        raise HarnessError("mode imat needs a grounder")
    problems = []
    for seq in sequences:
        problems += [f"{seq.name}: {v}" for v in validate(seq)]
    if problems:
        raise HarnessError("invalid sequences:\n" + "\n".join(problems))
    names = [s.name for s in sequences]
    if len(set(names)) != len(names):
        raise HarnessError("sequence names must be unique within a suite")
    jobs = [(seq, tracker, grounder, policy) for seq in sequences]
    workers = min(parallelism, len(jobs))
    if workers == 1:
        records = [_run_packed(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_packed, jobs))
    done = [r.report for r in records if r.report is not None]
    report = aggregate(done, policy.metric) if done else None
    return records, report
