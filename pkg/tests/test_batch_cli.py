import json
import subprocess
import sys

import pytest

from teardown.batch import (
    AggregateReport, ArmComparison, RunConfig, TrialResult, compare_modes, format_reports,
    metrics_csv, run_batch,
)
from teardown.cli import main
from teardown.scenario import load_scenario
from teardown.simulator import Metrics

from conftest import toy_doc


def fake(i, total, done, l1, l2):
    return TrialResult(i, i, Metrics(layer_times={"L1": l1, "L2": l2}, clearance_rate={"L1": 1.0},
                                     completed=done, total_time=total, faults=[] if done else ["x"]))


def test_report_arithmetic(toy):
    sc = toy()
    results = [fake(0, 120.0, True, 60.0, 60.0), fake(1, 180.0, False, 90.0, 90.0)]
    rep = AggregateReport.from_trials(sc, RunConfig("toy", 2), results)
    assert rep.success_rate == 0.5 and rep.mean_total_time == 150.0
    assert rep.layer_minutes() == {"L1": 1.2, "L2": 1.2} and rep.total_minutes == 2.5
    assert rep.fault_counts == {"x": 1}


def test_format_overall_row(toy):
    sc = toy()
    a = AggregateReport.from_trials(sc, RunConfig("toy", 1), [fake(0, 60.0, True, 30.0, 30.0)])
    b = AggregateReport.from_trials(sc, RunConfig("toy", 1), [fake(0, 60.0, False, 30.0, 30.0)])
    text = format_reports([a, b])
    assert text.splitlines()[-1].split()[-3:] == ["2", "1", "50.0"]


def test_run_config_validation():
    for bad in ({"trials": 0}, {"seed": -1}, {"seed": 2**64}, {"mode": "x"}, {"arms": 3}, {"workers": 0}):
        with pytest.raises(ValueError):
            RunConfig("samsung", **bad)


def test_batch_outputs(tmp_path):
    cfg = RunConfig("seagate", trials=3, seed=5, output_dir=str(tmp_path))
    res = run_batch(cfg)
    out = tmp_path / "seagate"
    assert sorted(p.name for p in (out / "timelines").iterdir()) == [f"trial_000{i}.csv" for i in range(3)]
    assert (out / "metrics.csv").read_text() == metrics_csv(res.trials)
    assert [r.seed for r in res.trials] == [5, 4, 7]


def test_workers_match_serial():
    serial = run_batch(RunConfig("samsung", trials=8, seed=3))
    parallel = run_batch(RunConfig("samsung", trials=8, seed=3, workers=2))
    assert metrics_csv(serial.trials) == metrics_csv(parallel.trials)
    assert serial.report == parallel.report


def test_compare_modes_coarse_faster_and_worse():
    c = compare_modes(load_scenario("samsung"), trials=30, seed=0)
    assert c.coarse.mean_layer_times["L1"] < c.fine.mean_layer_times["L1"]
    assert c.coarse.mean_clearance["L1"] < c.fine.mean_clearance["L1"] == 1.0


def test_arm_comparison_dominance():
    assert ArmComparison("x", [10.0, 12.0], [9.0, 12.0]).dominated
    assert not ArmComparison("x", [10.0], [11.0]).dominated


def test_cli_run(tmp_path, capsys):
    code = main(["run", "--scenario", "samsung", "seagate", "--trials", "2", "--seed", "1",
                 "--out", str(tmp_path), "--no-faults"])
    assert code == 0
    text = capsys.readouterr().out
    assert "Samsung" in text and "Overall" in text
    assert (tmp_path / "summary.txt").read_text() == text
    assert (tmp_path / "samsung" / "metrics.csv").exists()


def test_cli_compare_commands(capsys):
    assert main(["compare-modes", "--scenario", "western_digital", "--trials", "2"]) == 0
    assert "Coarse clearance" in capsys.readouterr().out
    assert main(["compare-arms", "--scenario", "seagate", "--trials", "2"]) == 0
    assert "Dual-arm" in capsys.readouterr().out


def test_cli_validate_and_exit_codes(tmp_path, capsys):
    assert main(["validate", "--scenario", "samsung"]) == 0
    bad = tmp_path / "bad.json"
    doc = toy_doc()
    doc["camera_arm"] = "ghost"
    bad.write_text(json.dumps(doc))
    assert main(["validate", "--scenario", str(bad)]) == 1
    assert "camera_arm" in capsys.readouterr().err
    assert main(["run", "--scenario", "missing_family"]) == 1
    # a scenario that deadlocks is a runtime error
    stuck = tmp_path / "stuck.json"
    doc = toy_doc(with_l2=False)
    doc["hold_categories"] = ["lid"]
    stuck.write_text(json.dumps(doc))
    assert main(["run", "--scenario", str(stuck), "--arms", "1", "--trials", "1"]) == 2


def test_cli_rejects_bad_seed():
    with pytest.raises(SystemExit):
        main(["run", "--scenario", "samsung", "--seed", "-3"])


def test_cli_byte_identical(tmp_path):
    outs = []
    for d in ("a", "b"):
        proc = subprocess.run(
            [sys.executable, "-m", "teardown.cli", "run", "--scenario", "western_digital", "--trials", "4",
             "--seed", "42", "--out", str(tmp_path / d)],
            capture_output=True, text=True, check=True)
        outs.append(proc.stdout)
    assert outs[0] == outs[1]
    for rel in ("summary.txt", "western_digital/metrics.csv", "western_digital/timelines/trial_0003.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
