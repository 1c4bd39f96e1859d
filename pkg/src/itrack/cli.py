"""Command-line entry point: ``itrack validate|synth|eval|report``.

Exit status: 0 success, 1 invalid input or configuration, 2 I/O or backend
protocol failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence as Seq

from . import dataset, report, synth
from .arbitration import ArbitrationConfig, ArbitrationConfigError, parse_ablations
from .harness import BackendSpec, EvalPolicy, HarnessError, Mode, PromptEffect, ProtocolError, run_suite
from .metrics import MetricConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("itrack")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    """Invalid user-supplied configuration (exit 1)."""


def _err(msg: str) -> None:
    print(f"itrack: {msg}", file=sys.stderr)


def setup_logging() -> None:
    level_name = os.environ.get("ITRACK_LOG", "WARNING").upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


# --- validate ----------------------------------------------------------------


def cmd_validate(args) -> int:
    status = EXIT_OK
    try:
        files = dataset.expand_paths(args.paths)
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    for path in files:
        try:
            seq = dataset.load(path, lenient=args.lenient)
        except OSError as exc:
            _err(f"{path}: {exc.strerror or exc}")
            return EXIT_IO
        except dataset.DatasetError as exc:
            print(f"{path}: {exc}")
            status = EXIT_INVALID
            continue
        for v in dataset.validate(seq):
            print(f"{path}:{v}")
            status = EXIT_INVALID
    return status


# --- synth -------------------------------------------------------------------


def _specs_from_file(path: str, seed: int | None) -> list[synth.SynthSpec]:
    with open(path, encoding="utf-8") as fh:
        if path.endswith(".toml"):
            raw: Any = tomllib.loads(fh.read())
            raw = raw.get("sequence", raw)
        else:
            raw = json.load(fh)
    items = raw if isinstance(raw, list) else [raw]
    specs = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise synth.SynthSpecError(f"[{i}]", "expected an object")
        if seed is not None:
            item = {**item, "seed": item.get("seed", 0) + seed} if len(items) > 1 else {**item, "seed": seed}
        try:
            specs.append(synth.spec_from_dict(item))
        except synth.SynthSpecError as exc:
            if len(items) > 1:
                raise synth.SynthSpecError(f"[{i}].{exc.field}", exc.reason) from None
            raise
    return specs


def cmd_synth(args) -> int:
    try:
        if args.preset:
            specs = synth.PRESETS[args.preset](seed=args.seed or 0)
        else:
            specs = _specs_from_file(args.spec, args.seed)
        seqs = [synth.synthesize(s) for s in specs]
    except synth.SynthSpecError as exc:
        _err(f"invalid spec: {exc}")
        return EXIT_INVALID
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        _err(f"{args.spec}: cannot parse spec ({exc})")
        return EXIT_INVALID
    except OSError as exc:
        _err(f"{args.spec}: {exc.strerror or exc}")
        return EXIT_IO
    names = [s.name for s in seqs]
    if len(set(names)) != len(names):
        _err("invalid spec: sequence names must be unique")
        return EXIT_INVALID
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for seq in seqs:
            dataset.save(seq, out / f"{seq.name}.json")
    except OSError as exc:
        _err(f"{out}: {exc.strerror or exc}")
        return EXIT_IO
    print(f"wrote {len(seqs)} sequences to {out}", file=sys.stderr)
    return EXIT_OK


# --- eval --------------------------------------------------------------------


def build_policy(args) -> tuple[EvalPolicy, BackendSpec, BackendSpec | None]:
    """Type-check every override before anything runs."""
    try:
        arb = ArbitrationConfig(
            tau_init=args.tau_init,
            tau_reinit=args.tau_reinit,
            delta_c=args.delta_c,
            ablation=parse_ablations(args.ablation or ()),
        )
        metric = MetricConfig(
            inclusive_success=args.inclusive_success,
            require_switch_overlap=args.require_switch_overlap,
        )
        policy = EvalPolicy(
            mode=Mode(args.mode),
            prompt_effect=None if args.prompt_effect is None else PromptEffect(args.prompt_effect),
            arbitration=arb,
            metric=metric,
            first_box_subpolicy=args.first_box_subpolicy,
            seed=args.seed,
        )
        if args.tracker is None:
            raise UsageError("eval needs --tracker")
        tracker = BackendSpec.parse(args.tracker, "tracker")
        grounder = None if args.grounder is None else BackendSpec.parse(args.grounder, "grounder")
        if policy.needs_grounder and grounder is None:
            raise UsageError("mode imat needs --grounder (or --ablation no-ipm)")
        if args.parallelism < 1:
            raise UsageError("--parallelism must be >= 1")
    except (ArbitrationConfigError, HarnessError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return policy, tracker, grounder


def cmd_eval(args) -> int:
    try:
        policy, tracker, grounder = build_policy(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_INVALID
    if not args.dataset:
        _err("eval needs at least one --dataset")
        return EXIT_INVALID
    try:
        seqs = dataset.load_many(args.dataset, lenient=args.lenient)
    except OSError as exc:
        _err(f"cannot read dataset: {exc}")
        return EXIT_IO
    except dataset.DatasetError as exc:
        _err(str(exc))
        return EXIT_INVALID
    if not seqs:
        _err("no sequences found")
        return EXIT_INVALID
    try:
        records, rep = run_suite(seqs, tracker, grounder, policy, args.parallelism)
    except HarnessError as exc:
        _err(str(exc))
        return EXIT_INVALID
    except ProtocolError as exc:
        _err(str(exc))
        return EXIT_IO
    # single writer, after aggregation
    out = Path(args.out)
    try:
        for rec in records:
            report.write_record(rec, out / "records")
        if rep is not None:
            cfg = report.run_config(tracker, grounder, policy.to_dict(), len(seqs))
            report.write_report(rep, out, cfg)
    except OSError as exc:
        _err(f"{out}: {exc.strerror or exc}")
        return EXIT_IO
    failed = [r for r in records if r.failed]
    for r in failed:
        _err(f"{r.sequence}: backend failed: {r.error}")
    if failed:
        return EXIT_IO
    o = rep.overall
    summary = " ".join(f"{k}={'n/a' if v is None else f'{v:.6f}'}" for k, v in o.scalars().items())
    print(summary, file=sys.stderr)
    return EXIT_OK


# --- report ------------------------------------------------------------------


def cmd_report(args) -> int:
    try:
        records = report.load_records(args.records)
    except FileNotFoundError as exc:
        _err(f"no such file or directory: {exc}")
        return EXIT_IO
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    except report.ReportError as exc:
        _err(str(exc))
        return EXIT_INVALID
    if not records:
        _err("no run records found")
        return EXIT_INVALID
    try:
        rep = report.report_from_records(records)
    except (report.ReportError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    out = Path(args.out)
    try:
        report.write_report(rep, out)
    except OSError as exc:
        _err(f"{out}: {exc.strerror or exc}")
        return EXIT_IO
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------


EVAL_DEFAULTS = {
    "dataset": None,
    "tracker": None,
    "grounder": None,
    "mode": Mode.IMAT.value,
    "prompt_effect": None,
    "first_box_subpolicy": "gt-reinit",
    "tau_init": 0.3,
    "tau_reinit": 0.6,
    "delta_c": 0.1,
    "ablation": None,
    "parallelism": 1,
    "seed": 0,
    "inclusive_success": False,
    "require_switch_overlap": False,
    "lenient": False,
    "out": None,
}


class _Parser(argparse.ArgumentParser):
    # bad flags are a configuration error, not the I/O class argparse defaults to
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="itrack", description="Interactive tracking evaluation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check sequence files against the dataset schema and invariants")
    v.add_argument("paths", nargs="+", help="sequence files or directories of *.json")
    v.add_argument("--lenient", action="store_true", help="ignore unknown fields")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("synth", help="generate synthetic sequences")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(synth.PRESETS))
    src.add_argument("--spec", help="JSON or TOML generator spec (an object or a list of objects)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="run an evaluation and write report, curves and run records")
    e.add_argument("--config", help="TOML file of defaults; flags override it")
    e.add_argument("--dataset", action="append", help="sequence file or directory (repeatable)")
    e.add_argument("--out", help="output directory")
    e.add_argument("--tracker", help="synthetic:<name>[?k=v&...] or exec:<command>")
    e.add_argument("--grounder", help="synthetic:<name>[?k=v&...] or exec:<command>")
    e.add_argument("--mode", choices=[m.value for m in Mode])
    e.add_argument("--prompt-effect", choices=[m.value for m in PromptEffect])
    e.add_argument("--first-box-subpolicy", choices=["gt-reinit", "ignore"])
    e.add_argument("--tau-init", type=float)
    e.add_argument("--tau-reinit", type=float)
    e.add_argument("--delta-c", type=float)
    e.add_argument("--ablation", action="append", help="no-ipm, no-memory, no-cam or naive-iou (repeatable)")
    e.add_argument("--parallelism", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--inclusive-success", action="store_true", default=None)
    e.add_argument("--require-switch-overlap", action="store_true", default=None)
    e.add_argument("--lenient", action="store_true", default=None)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="rebuild report and per-scenario curve bundles from run records")
    r.add_argument("records", nargs="+", help="run-record files or directories")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


_CONFIG_TYPES = {
    "dataset": list,
    "tracker": str,
    "grounder": str,
    "mode": str,
    "prompt_effect": str,
    "first_box_subpolicy": str,
    "tau_init": float,
    "tau_reinit": float,
    "delta_c": float,
    "ablation": list,
    "parallelism": int,
    "seed": int,
    "inclusive_success": bool,
    "require_switch_overlap": bool,
    "lenient": bool,
    "out": str,
}


def load_config(path: str) -> dict[str, Any]:
    """Read an eval TOML config; keys are flag names with ``-`` or ``_``."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    out = {}
    for key, value in raw.items():
        name = key.replace("-", "_")
        want = _CONFIG_TYPES.get(name)
        if want is None:
            raise UsageError(f"{path}: unknown key {key!r}")
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if want is list and isinstance(value, str):
            value = [value]
        ok = isinstance(value, want) and not (want in (int, float) and isinstance(value, bool))
        if want is list:
            ok = ok and all(isinstance(v, str) for v in value)
        if not ok:
            raise UsageError(f"{path}: {key} must be {want.__name__}, got {type(value).__name__}")
        if name in ("mode", "prompt_effect", "first_box_subpolicy"):
            choices = {
                "mode": [m.value for m in Mode],
                "prompt_effect": [m.value for m in PromptEffect],
                "first_box_subpolicy": ["gt-reinit", "ignore"],
            }[name]
            if value not in choices:
                raise UsageError(f"{path}: {key} must be one of {', '.join(choices)}")
        out[name] = value
    return out


def _merge_eval(args) -> None:
    base = dict(EVAL_DEFAULTS)
    if args.config:
        base.update(load_config(args.config))
    for key, default in base.items():
        if getattr(args, key, None) is None:
            setattr(args, key, default)
    if args.out is None:
        raise UsageError("eval needs --out")


def main(argv: Seq[str] | None = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    if args.command == "eval":
        try:
            _merge_eval(args)
        except UsageError as exc:
            _err(str(exc))
            return EXIT_INVALID
        except OSError as exc:
            _err(f"cannot read config: {exc.strerror or exc}")
            return EXIT_IO
        except tomllib.TOMLDecodeError as exc:
            _err(f"{args.config}: {exc}")
            return EXIT_INVALID
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
