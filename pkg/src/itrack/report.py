"""Report and run-record files.

Everything here is written with sorted keys and six fractional digits, so
two evaluations with the same inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Any, Iterable

from . import _json
from .geometry import BoundingBox
from .harness.runner import RunRecord
from .metrics import (
    SCALAR_NAMES,
    Curves,
    EvalReport,
    FramePrediction,
    MetricConfig,
    SequenceReport,
    Summary,
    aggregate,
)

REPORT_SCHEMA = "itrack-report/1"
RECORD_SCHEMA = "itrack-run/1"
CURVE_FIELDS = (("success", "success_thresholds"), ("precision", "precision_grid_px"), ("norm_precision", "norm_precision_grid"))


class ReportError(Exception):
    pass


def _curves_dict(c: Curves | None) -> dict | None:
    if c is None:
        return None
    return {"success": list(c.success), "precision": list(c.precision), "norm_precision": list(c.norm_precision)}


def _curves_from(d: dict | None) -> Curves | None:
    if d is None:
        return None
    return Curves(tuple(d["success"]), tuple(d["precision"]), tuple(d["norm_precision"]))


def summary_dict(s: Summary) -> dict:
    return {"n_sequences": s.n_sequences, **s.scalars(), "curves": _curves_dict(s.curves)}


def sequence_dict(r: SequenceReport) -> dict:
    return {"name": r.name, "scenario": r.scenario, **r.scalars(), "curves": _curves_dict(r.curves)}


def sequence_from_dict(d: dict) -> SequenceReport:
    return SequenceReport(
        name=d["name"],
        scenario=d["scenario"],
        curves=_curves_from(d.get("curves")),
        **{k: d.get(k) for k in SCALAR_NAMES},
    )


def report_dict(report: EvalReport, run_config: dict | None = None) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "config": {"metric": report.config.to_dict(), **(run_config or {})},
        "overall": summary_dict(report.overall),
        "per_scenario": {k: summary_dict(v) for k, v in report.per_scenario.items()},
        "sequences": [sequence_dict(r) for r in report.sequences],
    }


def dumps_report(report: EvalReport, run_config: dict | None = None) -> str:
    return _json.dumps(report_dict(report, run_config)) + "\n"


def _fmt(v: float | None) -> str:
    return "" if v is None else _json.fixed6(v)


def sequences_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "scenario", *SCALAR_NAMES])
    for r in report.sequences:
        w.writerow([r.name, r.scenario, *(_fmt(v) for v in r.scalars().values())])
    return buf.getvalue()


def curves_csv(curves: Curves | None, cfg: MetricConfig) -> str:
    """Long format: ``curve,threshold,value``, one row per grid point."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["curve", "threshold", "value"])
    if curves is not None:
        for name, grid_attr in CURVE_FIELDS:
            for x, y in zip(getattr(cfg, grid_attr), getattr(curves, name)):
                w.writerow([name, _json.fixed6(x), _json.fixed6(y)])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_curve_bundles(report: EvalReport, out_dir: str | os.PathLike) -> list[Path]:
    """``overall`` plus one bundle per scenario, each as CSV and JSON."""
    out = Path(out_dir)
    written = []
    bundles = {"overall": report.overall, **report.per_scenario}
    for name, summary in bundles.items():
        csv_path = out / f"{name}.csv"
        json_path = out / f"{name}.json"
        _write(csv_path, curves_csv(summary.curves, report.config))
        payload = {"bundle": name, **summary_dict(summary)}
        payload["grids"] = {g: list(getattr(report.config, g)) for _, g in CURVE_FIELDS}
        _write(json_path, _json.dumps(payload) + "\n")
        written += [csv_path, json_path]
    return written


def write_report(report: EvalReport, out_dir: str | os.PathLike, run_config: dict | None = None) -> None:
    out = Path(out_dir)
    _write(out / "report.json", dumps_report(report, run_config))
    _write(out / "sequences.csv", sequences_csv(report))
    write_curve_bundles(report, out / "curves")


# --- run records -----------------------------------------------------------


def record_dict(rec: RunRecord) -> dict:
    return {
        "schema": RECORD_SCHEMA,
        "sequence": rec.sequence,
        "scenario": rec.scenario,
        "n_frames": rec.n_frames,
        "failed": rec.failed,
        "error": rec.error,
        "policy": rec.policy,
        "duration_s": rec.duration_s,
        "predictions": [None if p.box is None else p.box.to_list() for p in rec.predictions],
        "memory": rec.memory,
        "report": None if rec.report is None else sequence_dict(rec.report),
    }


def write_record(rec: RunRecord, out_dir: str | os.PathLike) -> Path:
    """``<sequence>.json`` plus the arbitration trace as ``<sequence>.trace.jsonl``."""
    out = Path(out_dir)
    path = out / f"{rec.sequence}.json"
    _write(path, _json.dumps(record_dict(rec)) + "\n")
    _write(out / f"{rec.sequence}.trace.jsonl", "".join(_json.dumps(e) + "\n" for e in rec.trace))
    return path


def record_from_dict(d: dict, trace: list[dict] | None = None) -> RunRecord:
    if d.get("schema") != RECORD_SCHEMA:
        raise ReportError(f"not a run record (schema {d.get('schema')!r})")
    preds = [FramePrediction(t, None if b is None else BoundingBox(*b)) for t, b in enumerate(d["predictions"])]
    return RunRecord(
        sequence=d["sequence"],
        scenario=d["scenario"],
        n_frames=d["n_frames"],
        predictions=preds,
        trace=trace or [],
        memory=d.get("memory"),
        policy=d["policy"],
        duration_s=d["duration_s"],
        failed=d["failed"],
        error=d.get("error"),
        report=None if d.get("report") is None else sequence_from_dict(d["report"]),
    )


def record_paths(paths: Iterable[str | os.PathLike]) -> list[Path]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(q for q in p.glob("*.json"))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(p)
    return files


def load_records(paths: Iterable[str | os.PathLike]) -> list[RunRecord]:
    out = []
    for path in record_paths(paths):
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ReportError(f"{path}: not JSON ({exc})") from None
        try:
            out.append(record_from_dict(raw))
        except (KeyError, TypeError, ValueError) as exc:
            raise ReportError(f"{path}: malformed run record ({exc})") from None
    return out


def report_from_records(records: list[RunRecord]) -> EvalReport:
    """Re-aggregate stored per-sequence reports; failed runs are skipped."""
    done = [r for r in records if r.report is not None]
    if not done:
        raise ReportError("no completed run records")
    metric_cfgs = {_json.dumps(r.policy.get("metric", {})) for r in done}
    if len(metric_cfgs) > 1:
        raise ReportError("run records were scored with different metric settings")
    cfg = MetricConfig.from_dict(done[0].policy["metric"]) if "metric" in done[0].policy else MetricConfig()
    return aggregate([r.report for r in done], cfg)


def run_config(tracker: Any, grounder: Any, policy_dict: dict, n_sequences: int) -> dict:
    return {
        "tracker": str(tracker),
        "grounder": None if grounder is None else str(grounder),
        "policy": policy_dict,
        "n_sequences": n_sequences,
    }
