from __future__ import annotations

import json
from dataclasses import replace

import pytest

from taskloop.harness import TrialConfig, resolve_noise, run_suite, run_trial
from taskloop.scenarios import SCENARIO_NAMES, calibrated_noise, check_oracle, load_scenario, spawn_scenario
from taskloop.sim import NoiseModel
from taskloop.trace import KINDS, TraceError, TraceWriter, read_trace, validate_trace


def events(result) -> list[dict]:
    return read_trace(result.trace.lines)


# -- trace encoding -----------------------------------------------------------


def test_trace_writer_rejects_unknown_kind_and_reordering():
    w = TraceWriter()
    w.emit(3, "report", {"status": "done"})
    with pytest.raises(TraceError):
        w.emit(4, "chatter", {})
    with pytest.raises(TraceError):
        w.emit(2, "report", {})


def test_trace_lines_are_compact_json(tmp_path):
    w = TraceWriter()
    w.emit(0, "report", {"status": "done", "x": 0.12345678})
    path = w.write(tmp_path / "t.jsonl")
    assert path.read_text() == '{"tick":0,"kind":"report","payload":{"status":"done","x":0.123457}}\n'
    assert read_trace(path) == [{"tick": 0, "kind": "report", "payload": {"status": "done", "x": 0.123457}}]


def test_validator_flags_injected_violations():
    good = [
        {"tick": 0, "kind": "trial", "payload": {"supervisor_enabled": True}},
        {"tick": 1, "kind": "report", "payload": {"status": "in_progress", "ready": False, "preconditions": []}},
        {"tick": 1, "kind": "command", "payload": {"primitive": "FORWARD_WALK", "gait_id": 1, "base": [0.5, 0.0, 0.0]}},
    ]
    assert validate_trace(good) == []
    cases = {
        "caps": {"tick": 2, "kind": "command", "payload": {"primitive": "CARRY_AND_WALK", "gait_id": 4, "base": [0.9, 0.0, 0.0]}},
        "gait": {"tick": 2, "kind": "command", "payload": {"primitive": "TURN_LEFT", "gait_id": 11, "base": [0.0, 0.0, 0.5]}},
        "gating": {"tick": 1, "kind": "command", "payload": {"entered_manipulation": True, "base": [0.0, 0.0, 0.0]}},
        "budget": {"tick": 2, "kind": "subtask", "payload": {"name": "s", "attempt": 4, "max_retry": 2}},
        "order": {"tick": 0, "kind": "report", "payload": {"status": "in_progress"}},
        "safety": {
            "tick": 2,
            "kind": "report",
            "payload": {"status": "in_progress", "preconditions": [{"label": "BALANCE_OK()", "bit": False}]},
        },
    }
    for name, bad in cases.items():
        assert validate_trace(good + [bad]), name


def test_validator_flags_supervision_in_open_loop_trace():
    trace = [
        {"tick": 0, "kind": "trial", "payload": {"supervisor_enabled": False}},
        {"tick": 1, "kind": "feedback", "payload": {}},
    ]
    assert validate_trace(trace)


# -- trials -----------------------------------------------------------------


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_noiseless_trials_succeed_and_validate(name):
    r = run_trial(name, TrialConfig(seed=0))
    assert r.success, r.outcome
    assert validate_trace(events(r)) == []
    assert {e["kind"] for e in events(r)} <= set(KINDS)


@pytest.mark.parametrize("name", ["fetch_bottle", "grasp_bottle", "place_coffee", "bring_me_a_drink"])
def test_uncluttered_noiseless_trials_need_no_recovery(name):
    assert run_trial(name, TrialConfig(seed=0)).recoveries == {}


def test_trial_is_deterministic():
    cfg = TrialConfig(seed=5, noise="calibrated")
    a, b = run_trial("tidy_desk", cfg), run_trial("tidy_desk", cfg)
    assert a.trace.text() == b.trace.text()
    assert a.to_dict() == b.to_dict()


def test_total_mask_miss_fails_on_visibility():
    r = run_trial("fetch_bottle", TrialConfig(seed=0, noise={"mask_miss_prob": 1.0}))
    assert not r.success
    failing = [f["key"] for e in events(r) if e["kind"] == "feedback" for f in e["payload"]["failing"]]
    assert failing and set(failing) == {"VISIBLE"}


def test_open_loop_trace_has_no_supervision_events():
    r = run_trial("tidy_desk", TrialConfig(seed=1, noise="calibrated", supervisor_enabled=False))
    kinds = {e["kind"] for e in events(r)}
    assert not kinds & {"report", "feedback", "recovery"}
    assert validate_trace(events(r)) == []


def test_done_report_encoding():
    r = run_trial("bring_me_a_drink", TrialConfig(seed=0))
    assert any(e["kind"] == "report" and e["payload"]["status"] == "done" for e in events(r))


def test_trace_written_to_dir(tmp_path):
    r = run_trial("grasp_bottle", TrialConfig(seed=2), trace_dir=tmp_path)
    assert r.trace_path is not None
    assert validate_trace(r.trace_path) == []
    with open(r.trace_path) as fh:
        assert json.loads(fh.readline())["kind"] == "trial"


def test_trace_io_error_is_recorded(tmp_path):
    blocker = tmp_path / "not_a_dir"
    blocker.write_text("x")
    r = run_trial("grasp_bottle", TrialConfig(seed=0), trace_dir=blocker)
    assert not r.success and r.outcome.startswith("failed:trace_io")


def test_replan_feedback_precedes_plan():
    # budget exhaustion under a long burst escalates to the planner
    r = run_trial("grasp_bottle", TrialConfig(seed=0, noise={"occlusion_bursts": [["bottle_1", 0, 10]]}))
    evs = events(r)
    plan_idx = [i for i, e in enumerate(evs) if e["kind"] == "plan"]
    assert len(plan_idx) == 1 + r.replans and r.replans >= 1
    for i in plan_idx[1:]:
        assert any(e["kind"] == "feedback" for e in evs[:i])
    assert validate_trace(evs) == []


# -- noise and oracles --------------------------------------------------------


def test_calibrated_profile_values():
    spec = load_scenario("tidy_desk")
    n = calibrated_noise(spec, 3)
    assert (n.depth_sigma, n.mask_miss_prob, n.distractor_prob) == (0.01, 0.15, 0.05)
    assert len(n.occlusion_bursts) == 2 and all(b[2] == 10 for b in n.occlusion_bursts)
    assert calibrated_noise(spec, 3) == n
    assert resolve_noise(spec, 3, "calibrated") == n


def test_resolve_noise_variants():
    spec = load_scenario("tidy_desk")
    assert resolve_noise(spec, 0, None) == NoiseModel()
    assert resolve_noise(spec, 0, {"depth_sigma": 0.02}).depth_sigma == 0.02
    with pytest.raises(ValueError):
        resolve_noise(spec, 0, "loud")


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_oracle_false_at_spawn(name):
    spec = load_scenario(name)
    assert not check_oracle(spec, spawn_scenario(spec, 0))


def test_oracle_reads_only_ground_truth():
    spec = load_scenario("place_coffee")
    w = spawn_scenario(spec, 0)
    moved = replace(w, objects=tuple(replace(o, support_of=spec.oracle["support"]) if o.id == spec.oracle["object"] else o for o in w.objects))
    assert check_oracle(spec, moved)


# -- suites -------------------------------------------------------------------


def test_suite_counts_and_format():
    t = run_suite("grasp_bottle", 3)
    assert t.counts == {"with_supervisor": 3}
    assert t.cell("with_supervisor") == "3/3"
    assert "3/3" in t.text()


def test_suite_ablation_columns_share_seeds():
    t = run_suite("grasp_bottle", 2, ablation=True, first_seed=4)
    assert list(t.counts) == ["with_supervisor", "without_supervisor"]
    for rs in t.results.values():
        assert [r.seed for r in rs] == [4, 5]
    assert json.loads(json.dumps(t.to_dict()))["table"]["with_supervisor"] == "2/2"


def test_suite_rejects_zero_trials():
    with pytest.raises(ValueError):
        run_suite("grasp_bottle", 0)


def test_suite_is_reproducible():
    cfg = TrialConfig(noise="calibrated")
    assert run_suite("place_coffee", 3, cfg, ablation=True).to_dict() == run_suite("place_coffee", 3, cfg, ablation=True).to_dict()
