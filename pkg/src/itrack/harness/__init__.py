"""Interaction-loop harness: backends, the wire protocol and the evaluation driver."""

from .backends import GROUNDERS, TRACKERS, DriftTracker, MemoryAwareTracker, NoisyTracker, OracleTracker, ScriptedGrounder
from .protocol import BackendCrashed, ExternalGrounder, ExternalTracker, ProtocolError
from .runner import (
    BackendSpec,
    EvalPolicy,
    HarnessError,
    Mode,
    PromptEffect,
    RunRecord,
    run,
    run_one,
    run_suite,
)

__all__ = [
    "GROUNDERS",
    "TRACKERS",
    "BackendCrashed",
    "BackendSpec",
    "DriftTracker",
    "EvalPolicy",
    "ExternalGrounder",
    "ExternalTracker",
    "HarnessError",
    "MemoryAwareTracker",
    "Mode",
    "NoisyTracker",
    "OracleTracker",
    "PromptEffect",
    "ProtocolError",
    "RunRecord",
    "ScriptedGrounder",
    "run",
    "run_one",
    "run_suite",
]
