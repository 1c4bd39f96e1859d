"""Line-delimited JSON adapter for backends running as external processes.

The harness writes one JSON object per line to the backend's stdin and reads
one reply line per ``frame`` request (and per ``prompt`` request where a reply
is expected). Replies must carry the frame index of the request they answer,
in request order. Anything else raises :class:`ProtocolError`, which names the
offending reply line; a backend that exits or stops answering raises
:class:`BackendCrashed`.
"""

from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import threading
from collections import deque
from typing import Any

import numpy as np

from ..dataset import Sequence
from ..geometry import BoundingBox, InvalidGeometryError

DEFAULT_TIMEOUT_S = 60.0


class ProtocolError(Exception):
    def __init__(self, backend: str, line_no: int, line: str, reason: str):
        self.backend = backend
        self.line_no = line_no
        self.line = line
        self.reason = reason
        super().__init__(f"protocol violation from {backend} at reply line {line_no}: {reason}: {line!r}")

    def __reduce__(self):
        return (type(self), (self.backend, self.line_no, self.line, self.reason))


class BackendCrashed(Exception):
    pass


def _box_msg(box: BoundingBox) -> list[float]:
    return [box.x, box.y, box.w, box.h]


class ExternalProcess:
    """One backend process, spoken to over stdin/stdout."""

    def __init__(self, command: str | list[str], role: str, timeout: float = DEFAULT_TIMEOUT_S):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.role = role
        self.timeout = timeout
        self.label = f"{role} `{' '.join(self.argv)}`"
        try:
            self.proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise BackendCrashed(f"cannot start {self.label}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._stderr_tail: deque[str] = deque(maxlen=20)
        self._line_no = 0
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()

    def _pump_stdout(self) -> None:
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _pump_stderr(self) -> None:
        for line in self.proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))

    def _crash(self, what: str) -> BackendCrashed:
        tail = "; ".join(self._stderr_tail)
        return BackendCrashed(f"{self.label} {what}" + (f" (stderr: {tail})" if tail else ""))

    def send(self, msg: dict[str, Any]) -> None:
        try:
            self.proc.stdin.write(json.dumps(msg, separators=(",", ":")) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise self._crash(f"stopped accepting input ({exc})") from exc

    def receive(self, expected_t: int) -> tuple[BoundingBox | None, float | None]:
        """Read the reply for frame ``expected_t``: ``(box or None if absent, score)``."""
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise self._crash(f"sent no reply for t={expected_t} within {self.timeout}s") from None
        if line is None:
            self.proc.wait(timeout=5)
            raise self._crash(f"exited (code {self.proc.returncode}) before replying to t={expected_t}")
        self._line_no += 1
        return parse_reply(line.rstrip("\r\n"), expected_t, self.label, self._line_no)

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.send({"cmd": "end"})
                self.proc.stdin.close()
            except (BackendCrashed, OSError, ValueError):
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        for stream in (self.proc.stdout, self.proc.stderr):
            try:
                stream.close()
            except OSError:
                pass


def parse_reply(line: str, expected_t: int, backend: str, line_no: int) -> tuple[BoundingBox | None, float | None]:
    def bad(reason: str) -> ProtocolError:
        return ProtocolError(backend, line_no, line, reason)

    try:
        msg = json.loads(line)
    except json.JSONDecodeError:
        raise bad("non-JSON line") from None
    if not isinstance(msg, dict):
        raise bad("reply is not a JSON object")
    if "t" not in msg:
        raise bad("missing field 't'")
    t = msg["t"]
    if isinstance(t, bool) or not isinstance(t, int):
        raise bad("field 't' is not an integer")
    if t != expected_t:
        raise bad(f"out-of-order reply: expected t={expected_t}, got t={t}")
    score = msg.get("score")
    if score is not None and (isinstance(score, bool) or not isinstance(score, (int, float))):
        raise bad("field 'score' is not a number")
    if msg.get("absent") is True:
        if "box" in msg:
            raise bad("reply has both 'box' and 'absent'")
        return None, score
    if "box" not in msg:
        raise bad("missing field 'box'")
    raw = msg["box"]
    if (
        not isinstance(raw, list)
        or len(raw) != 4
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) for v in raw)
    ):
        raise bad("malformed box, expected [x, y, w, h]")
    try:
        return BoundingBox(*raw), score
    except InvalidGeometryError as exc:
        raise bad(f"malformed box: {exc}") from None


class ExternalTracker:
    """Tracker backend over the wire protocol."""

    def __init__(self, seq: Sequence, command, expects_prompt_reply: bool = False, timeout=DEFAULT_TIMEOUT_S):
        self.seq = seq
        self.expects_prompt_reply = expects_prompt_reply
        self.io = ExternalProcess(command, "tracker", timeout)

    def init(self, t, box=None, text=None):
        msg: dict[str, Any] = {
            "cmd": "init",
            "name": self.seq.name,
            "width": self.seq.size.width,
            "height": self.seq.size.height,
        }
        if box is not None:
            msg["box"] = _box_msg(box)
        if text is not None:
            msg["text"] = text
        self.io.send(msg)

    def reset(self, t, box, text=None):
        self.io.send({"cmd": "prompt", "t": t, "text": text or "", "box": _box_msg(box)})

    def prompt(self, t, text):
        self.io.send({"cmd": "prompt", "t": t, "text": text})
        if self.expects_prompt_reply:
            return self.io.receive(t)[0]
        return None

    def predict(self, t, memory=None):
        msg: dict[str, Any] = {"cmd": "frame", "t": t}
        feats = frame_features(self.seq, t)
        if feats is not None:
            msg["features"] = feats
        self.io.send(msg)
        return self.io.receive(t)[0]

    def close(self):
        self.io.close()


class ExternalGrounder:
    """Grounder backend: receives only prompts and answers each with one box."""

    def __init__(self, seq: Sequence, command, timeout=DEFAULT_TIMEOUT_S):
        self.seq = seq
        self.io = ExternalProcess(command, "grounder", timeout)

    def ground(self, t, text):
        self.io.send({"cmd": "prompt", "t": t, "text": text})
        return self.io.receive(t)[0]

    def close(self):
        self.io.close()


def frame_features(seq: Sequence, t: int) -> dict[str, list[float]] | None:
    if not seq.features:
        return None
    out = {}
    for oid, arr in seq.features.items():
        if seq.objects is not None and oid in seq.objects and seq.objects[oid][t] is None:
            continue
        out[oid] = [float(v) for v in np.asarray(arr[t])]
    return out
