from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest

from taskloop.cli import main
from taskloop.scenarios import SCENARIO_NAMES


def run_cli(*argv) -> tuple[int, str]:
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


def test_run_prints_table_and_writes_traces(tmp_path):
    code, text = run_cli("run", "--scenario", "grasp_bottle", "--seed", "3", "--trials", "2", "--trace-dir", str(tmp_path))
    assert code == 0
    assert "seed=3" in text and "seed=4" in text
    assert text.strip().splitlines()[-1].split() == ["grasp_bottle", "2/2"]
    assert len(list(tmp_path.glob("*.jsonl"))) == 2
    summary = json.loads((tmp_path / "grasp_bottle_summary.json").read_text())
    assert summary["first_seed"] == 3 and summary["table"] == {"with_supervisor": "2/2"}


def test_ablation_columns(tmp_path):
    out = tmp_path / "s.json"
    code, text = run_cli("run", "--scenario", "grasp_bottle", "--ablation", "--noise", "calibrated", "--summary-json", str(out))
    assert code == 0
    assert "with_supervisor" in text and "without_supervisor" in text
    assert set(json.loads(out.read_text())["counts"]) == {"with_supervisor", "without_supervisor"}


def test_noise_file(tmp_path):
    noise = tmp_path / "noise.json"
    noise.write_text(json.dumps({"mask_miss_prob": 1.0}))
    code, text = run_cli("run", "--scenario", "grasp_bottle", "--noise", str(noise), "--max-sim-time", "3")
    assert code == 0 and "0/1" in text


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--scenario", "grasp_bottle", "--trials", "0"],
        ["run", "--scenario", "juggle"],
        ["run", "--scenario", "grasp_bottle", "--seed", "-1"],
        ["run", "--scenario", "grasp_bottle", "--noise", "loud"],
        ["run"],
    ],
)
def test_bad_arguments_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv, io.StringIO())
    assert exc.value.code == 2


def test_external_planner_needs_url(monkeypatch, capsys):
    monkeypatch.delenv("PLANNER_URL", raising=False)
    code, _ = run_cli("run", "--scenario", "grasp_bottle", "--planner", "external")
    assert code == 2
    assert "PLANNER_URL" in capsys.readouterr().err


def test_gaits_document():
    code, text = run_cli("gaits")
    assert code == 0
    doc = json.loads(text)
    assert doc["TURN_LEFT"] == [10] and doc["TURN_RIGHT"] == [11]


def test_scenarios_listing():
    code, text = run_cli("scenarios")
    assert code == 0 and tuple(text.split()) == SCENARIO_NAMES


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "taskloop", "gaits"], capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["RUN"] == [6, 7]
