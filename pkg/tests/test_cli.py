from __future__ import annotations

import json
import subprocess
import sys

import pytest

from itrack.cli import main
from itrack.dataset import Scenario


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    assert main(["synth", "--preset", "ablation-suite", "--seed", "2", "--out", str(out)]) == 0
    return out


def first_file(d):
    return sorted(d.glob("*.json"))[0]


def test_validate_accepts_generated_files(suite_dir, capsys):
    assert main(["validate", str(suite_dir)]) == 0
    assert capsys.readouterr().out == ""


def test_validate_reports_only_the_broken_file(suite_dir, tmp_path, capsys):
    good = first_file(suite_dir)
    raw = json.loads(good.read_text())
    raw["events"] = raw["events"][1:]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(raw))
    (tmp_path / "good.json").write_text(good.read_text())
    assert main(["validate", str(tmp_path)]) == 1
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.startswith(str(bad)) for line in lines)


def test_validate_missing_path_is_io_error(tmp_path):
    assert main(["validate", str(tmp_path / "nope.json")]) == 2


def test_validate_non_json_is_invalid(tmp_path, capsys):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    assert main(["validate", str(p)]) == 1
    assert str(p) in capsys.readouterr().out


def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--preset", "ablation-suite", "--seed", "7", "--out", str(a)]) == 0
    assert main(["synth", "--preset", "ablation-suite", "--seed", "7", "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert len(names) == 20 and names == sorted(p.name for p in b.iterdir())
    assert all((a / n).read_bytes() == (b / n).read_bytes() for n in names)


def test_synth_from_toml_spec(tmp_path):
    spec = tmp_path / "s.toml"
    spec.write_text(
        """
seed = 4
n_frames = 50
name = "toml-seq"
[[objects]]
trajectory = "linear"
velocity = [2.0, 0.0]
[[events]]
t = 0
kind = "init"
target = 0
"""
    )
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 0
    assert main(["validate", str(tmp_path / "o" / "toml-seq.json")]) == 0


@pytest.mark.parametrize(
    "body",
    [
        '{"seed": 0, "n_frames": 0, "objects": [{}], "events": [{"t": 0, "kind": "init", "target": 0}]}',
        '{"seed": 0, "n_frames": 10, "objects": [{}], "events": [{"t": 3, "kind": "init", "target": 0}]}',
        '{"seed": 0, "n_frames": 10, "objects": [{"trajectory": "spiral"}], "events": [{"t": 0, "kind": "init", "target": 0}]}',
        '{"n_frames": 10}',
        "[1]",
        "{oops",
    ],
)
def test_synth_invalid_spec_exits_1(tmp_path, body, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(body)
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 1
    assert "itrack:" in capsys.readouterr().err


def eval_args(suite_dir, out, *extra):
    return ["eval", "--dataset", str(suite_dir), "--out", str(out), *extra]


@pytest.mark.parametrize("mode", ["imat", "gt-reinit", "text-forward", "first-box-only"])
def test_eval_oracle_scores_maximal(suite_dir, tmp_path, mode):
    args = eval_args(suite_dir, tmp_path, "--tracker", "synthetic:oracle", "--mode", mode)
    if mode == "imat":
        args += ["--grounder", "synthetic:scripted"]
    assert main(args) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    o = rep["overall"]
    assert (o["interactive_score"], o["responsiveness"], o["perception_accuracy"], o["precision"]) == (1.0, 1.0, 1.0, 1.0)
    assert rep["config"]["policy"]["mode"] == mode
    assert len(list((tmp_path / "records").glob("*.trace.jsonl"))) == 20


def exit_code(argv):
    # argparse rejections surface as SystemExit rather than a return value
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


@pytest.mark.parametrize(
    "extra",
    [
        ["--ablation", "no-sam"],
        ["--tau-init", "0.7", "--tau-reinit", "0.6"],
        ["--parallelism", "0"],
        ["--mode", "vot"],
        ["--tracker", "synthetic:unknown"],
        ["--mode", "gt-reinit", "--ablation", "no-cam"],
        ["--bogus-flag"],
    ],
)
def test_eval_configuration_errors_exit_1(suite_dir, tmp_path, extra):
    args = eval_args(suite_dir, tmp_path, "--tracker", "synthetic:oracle", "--grounder", "synthetic:scripted")
    assert exit_code(args + extra) == 1


def test_imat_without_grounder_exits_1(suite_dir, tmp_path):
    assert main(eval_args(suite_dir, tmp_path, "--tracker", "synthetic:oracle")) == 1


def test_eval_missing_dataset_exits_2(tmp_path):
    args = eval_args(tmp_path / "absent", tmp_path / "o", "--tracker", "synthetic:oracle", "--mode", "gt-reinit")
    assert main(args) == 2


def test_config_file_is_overridden_by_flags(suite_dir, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        f'dataset = ["{suite_dir}"]\ntracker = "synthetic:oracle"\nmode = "first-box-only"\ntau-reinit = 0.5\n'
    )
    assert main(["eval", "--config", str(cfg), "--mode", "gt-reinit", "--out", str(tmp_path / "o")]) == 0
    pol = json.loads((tmp_path / "o" / "report.json").read_text())["config"]["policy"]
    assert pol["mode"] == "gt-reinit"
    assert pol["arbitration"]["tau_reinit"] == 0.5


@pytest.mark.parametrize("body", ['colour = "red"\n', "parallelism = \"two\"\n", 'mode = "vot"\n', "x = [1,\n"])
def test_bad_config_exits_1(tmp_path, body):
    cfg = tmp_path / "c.toml"
    cfg.write_text(body)
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_report_rebuilds_bundles_from_records(suite_dir, tmp_path):
    run = tmp_path / "run"
    args = eval_args(suite_dir, run, "--tracker", "synthetic:drift", "--grounder", "synthetic:scripted")
    assert main(args) == 0
    out = tmp_path / "rep"
    assert main(["report", str(run / "records"), "--out", str(out)]) == 0
    six = sorted(s.value for s in Scenario)
    bundles = sorted(p.stem for p in (out / "curves").glob("*.csv"))
    assert bundles == sorted(["overall", *six])
    assert sorted(p.stem for p in (out / "curves").glob("*.json")) == bundles
    a = json.loads((run / "report.json").read_text())
    b = json.loads((out / "report.json").read_text())
    assert a["overall"] == b["overall"] and a["per_scenario"] == b["per_scenario"]
    header = (out / "curves" / "overall.csv").read_text().splitlines()[0]
    assert header == "curve,threshold,value"


def test_report_with_no_records_exits_1(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["report", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 1


def test_report_missing_path_exits_2(tmp_path):
    assert main(["report", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(suite_dir):
    proc = subprocess.run([sys.executable, "-m", "itrack", "validate", str(suite_dir)], capture_output=True, text=True)
    assert proc.returncode == 0
    proc = subprocess.run([sys.executable, "-m", "itrack", "eval"], capture_output=True, text=True)
    assert proc.returncode == 1
