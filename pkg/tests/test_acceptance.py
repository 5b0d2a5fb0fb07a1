"""One test per acceptance criterion, each recording a single pass/fail line.

Slow criteria (fuzzed trials, paired ablation) carry the ``slow`` marker so
``pytest -m "not slow"`` gives a quick loop; the full run includes them.
"""

from __future__ import annotations

import copy
import itertools
import json
import math
import time

import httpx
import numpy as np
import pytest

from taskloop.executor import gait_table_document
from taskloop.grounding import PointCloud, backproject, estimate_state, select_best
from taskloop.harness import TrialConfig, run_suite, run_trial
from taskloop.planner import EXTERNAL, ExternalPlanner, PlannerConfig, RulePlanner, workspace_refs
from taskloop.program import PredicateAssertion, parse_program, program_to_dict, serialize_program, validate_program
from taskloop.replanner import PlannerError
from taskloop.scenarios import SCENARIO_NAMES, spawn_scenario
from taskloop.sim import NoiseModel, render_observation
from taskloop.supervisor import PredicateState, sat
from taskloop.trace import read_trace, validate_trace

from . import oracles
from .test_planner import TIDY, _paths, delete_path


def events(result) -> list[dict]:
    return read_trace(result.trace.lines)


# -- 1 ---------------------------------------------------------------------


def test_ac1_schema_fidelity(reference_text, verdict):
    t0 = time.perf_counter()
    p = parse_program(reference_text)
    report = validate_program(p)
    doc = json.loads(reference_text)
    canonical = json.dumps(doc, separators=(",", ":"), ensure_ascii=False)
    round_trip = serialize_program(p) == canonical and serialize_program(parse_program(serialize_program(p))) == canonical
    s = p.subtasks[0]
    goldens = (
        [c.stable_frames for c in s.preconditions] == [3]
        and [c.stable_frames for c in s.success_conditions] == [10]
        and s.timeout_sec == 30
        and s.max_retry == 2
        and dict(s.success_conditions[0].args)["support"] == "table_1"
    )
    dt = time.perf_counter() - t0
    verdict(1, report.ok and round_trip and goldens and dt < 1.0, f"reference program valid={report.ok} byte round-trip={round_trip} goldens={goldens} ({dt * 1e3:.1f} ms)")


# -- 2 ---------------------------------------------------------------------


def test_ac2_stability_oracle(verdict):
    t0 = time.perf_counter()
    checked = mismatches = 0
    for n in range(1, 5):
        pred = PredicateAssertion("VISIBLE", (("object", "obj_1"),), "==", True, n)
        for length in range(1, 9):
            for bits in itertools.product((0, 1), repeat=length):
                ps = PredicateState(pred)
                for t, b in enumerate(bits):
                    ps.push(b)
                    checked += 1
                    mismatches += int(sat(ps)) != oracles.windowed_product(bits, n, t)
    dt = time.perf_counter() - t0
    verdict(2, mismatches == 0 and dt < 1.0, f"streaming sat vs windowed product: {checked} prefixes, {mismatches} mismatches ({dt:.2f} s)")


# -- 3 ---------------------------------------------------------------------


def test_ac3_flicker_suppression(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20260315)
    n, windows = 10, 100_000
    bits = rng.random((windows, n)) < 0.5
    pred = PredicateAssertion("SUPPORTED_BY", (("object", "obj_1"), ("support", "table_1")), "==", True, n)
    premature = 0
    for row in bits:
        ps = PredicateState(pred)
        for b in row:
            ps.push(int(b))
        premature += sat(ps)
    rate = premature / windows
    expect = 0.5**n
    dt = time.perf_counter() - t0
    ok = expect / 3 <= rate <= 3 * expect and dt < 10.0
    verdict(3, ok, f"premature-done rate {rate:.3e} vs analytic {expect:.3e} over {windows} windows ({dt:.1f} s)")


# -- 4 ---------------------------------------------------------------------


def test_ac4_geometry_oracles(verdict):
    t0 = time.perf_counter()
    # rendered masks back-project inside their source boxes
    outside = total = 0
    for name in SCENARIO_NAMES:
        for seed in range(3):
            w = spawn_scenario(name, seed)
            obs = render_observation(w, list(w.phrase_table), NoiseModel(), np.random.default_rng(seed))
            for cands in obs.candidates.values():
                for m in cands:
                    src = w.obj(m.source)
                    pts = backproject(m.rows, m.cols, obs.depth, obs.camera).points
                    total += len(pts)
                    outside += sum(not src.contains_point(p, 1e-6) for p in pts)
    # noiseless centroid and 5:1 principal axis
    rng = np.random.default_rng(7)
    worst_c, worst_axis = 0.0, 0.0
    for _ in range(50):
        c = rng.uniform([-1, -1, 0.5], [1, 1, 1.2])
        length, yaw = rng.uniform(0.05, 0.3), rng.uniform(-math.pi, math.pi)
        pts = oracles.box_lattice(c, (length, length / 5, length / 5), yaw)
        s = estimate_state(PointCloud(pts, len(pts), 1.0), 1.0)
        worst_c = max(worst_c, float(np.linalg.norm(s.centroid - c)))
        worst_axis = max(worst_axis, oracles.axis_angle(s.axis, (math.cos(yaw), math.sin(yaw), 0.0)))
    # noisy centroid bound
    sigma, runs, within = 0.01, 500, 0
    for _ in range(runs):
        c = rng.uniform([-1, -1, 0.5], [1, 1, 1.2])
        half = rng.uniform(0.02, 0.15, 3)
        pts = oracles.box_lattice(c, half, rng.uniform(-math.pi, math.pi), k=9)
        pts = pts + rng.normal(0.0, sigma, pts.shape)
        s = estimate_state(PointCloud(pts, len(pts), 1.0), 1.0)
        within += float(np.linalg.norm(s.centroid - c)) <= 5 * sigma / math.sqrt(len(pts))
    dt = time.perf_counter() - t0
    ok = outside == 0 and total > 0 and worst_c <= 1e-6 and worst_axis <= 1e-3 and within >= 0.95 * runs and dt < 30.0
    verdict(
        4,
        ok,
        f"{outside}/{total} back-projected points outside boxes; centroid err {worst_c:.1e} m; "
        f"axis err {worst_axis:.1e} rad; noisy centroid within bound {within}/{runs} ({dt:.1f} s)",
    )


# -- 5 ---------------------------------------------------------------------


def test_ac5_argmax_scaling(verdict):
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(1000):
        table = rng.random((int(rng.integers(1, 10)), 4))
        w = rng.uniform(0.01, 1.0, 4)
        k = select_best(table, w)
        lam = float(np.exp(rng.uniform(-7, 7)))
        bad += k != oracles.weighted_argmax(table, w) or select_best(table, lam * w) != k
    verdict(5, bad == 0, f"argmax changed under positive weight scaling in {bad}/1000 tables")


# -- 6 ---------------------------------------------------------------------


def test_ac6_gait_table(verdict):
    golden = {
        "FORWARD_WALK": [0, 1],
        "BACKWARD_WALK": [2, 3],
        "CARRY_AND_WALK": [4, 5],
        "RUN": [6, 7],
        "SIDE_WALK": [8, 9],
        "TURN_LEFT": [10],
        "TURN_RIGHT": [11],
    }
    doc = gait_table_document()
    verdict(6, doc == golden, f"gait table {'matches' if doc == golden else 'differs from'} the golden mapping")


# -- 7 ---------------------------------------------------------------------


def fuzzed_config(rng: np.random.Generator) -> tuple[str, TrialConfig]:
    name = SCENARIO_NAMES[int(rng.integers(len(SCENARIO_NAMES)))]
    noise = {
        "depth_sigma": float(rng.uniform(0.0, 0.02)),
        "pixel_dropout": float(rng.uniform(0.0, 0.2)),
        "mask_miss_prob": float(rng.uniform(0.0, 0.4)),
        "distractor_prob": float(rng.uniform(0.0, 0.3)),
        "bursts": int(rng.integers(0, 4)),
        "burst_ticks": int(rng.integers(5, 25)),
    }
    faults = None
    if rng.random() < 0.3:
        faults = ((int(rng.integers(10, 200)), int(rng.integers(1, 6))),)
    cfg = TrialConfig(
        seed=int(rng.integers(2**32)),
        noise=noise,
        supervisor_enabled=bool(rng.random() < 0.8),
        recovery_enabled=bool(rng.random() < 0.9),
        max_sim_time=float(rng.uniform(15.0, 40.0)),
        stance_faults=faults,
    )
    return name, cfg


@pytest.mark.slow
def test_ac7_budget_and_gating_invariants(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7007)
    trials, clean, safety_reports = 200, 0, 0
    first_bad = None
    for _ in range(trials):
        name, cfg = fuzzed_config(rng)
        evs = events(run_trial(name, cfg))
        errs = validate_trace(evs)
        clean += not errs
        safety_reports += sum(
            1
            for e in evs
            if e["kind"] == "report" and any(f["label"].startswith("BALANCE_OK") and not f["bit"] for f in e["payload"]["preconditions"])
        )
        if errs and first_bad is None:
            first_bad = f"{name} seed={cfg.seed}: {errs[0]}"
    dt = time.perf_counter() - t0
    ok = clean == trials and dt < 120.0
    detail = f"trace validator clean on {clean}/{trials} fuzzed trials, {safety_reports} safety-violation reports ({dt:.0f} s)"
    verdict(7, ok, detail + (f"; first violation {first_bad}" if first_bad else ""))


# -- 8 ---------------------------------------------------------------------


def test_ac8_recovery_efficacy(verdict):
    burst = {"occlusion_bursts": [["coffee_1", 4, 10]]}
    on = run_trial("place_coffee", TrialConfig(seed=0, noise=burst))
    off = run_trial("place_coffee", TrialConfig(seed=0, noise=burst, recovery_enabled=False))
    evs = events(on)
    blocked_visible = [
        e["tick"]
        for e in evs
        if e["kind"] == "feedback" and e["payload"]["status"] == "blocked" and any(f["key"] == "VISIBLE" for f in e["payload"]["failing"])
    ]
    ops = [e["payload"]["operator"] for e in evs if e["kind"] == "recovery"]
    triggered = bool(ops) and ops[0] in ("RE_OBSERVE", "RE_GROUND")
    ok = bool(blocked_visible) and triggered and on.success and not off.success
    verdict(
        8,
        ok,
        f"1 s burst: blocked-VISIBLE at tick {blocked_visible[0] if blocked_visible else None}, operators {ops}, "
        f"success with recovery={on.success}, without={off.success} ({off.outcome})",
    )


# -- 9 ---------------------------------------------------------------------


@pytest.mark.slow
def test_ac9_ablation_direction(verdict):
    t0 = time.perf_counter()
    cfg = TrialConfig(noise="calibrated")
    counts = {}
    for name in ("tidy_desk", "tabletop_sorting", "bring_me_a_drink"):
        t = run_suite(name, 50, cfg, ablation=True)
        counts[name] = (t.counts["with_supervisor"], t.counts["without_supervisor"])
    dt = time.perf_counter() - t0
    ge = all(a >= b for a, b in counts.values())
    gt = sum(a > b for a, b in counts.values())
    cells = ", ".join(f"{k} {a}/50 vs {b}/50" for k, (a, b) in counts.items())
    verdict(9, ge and gt >= 2 and dt < 300.0, f"supervisor on vs off: {cells} ({dt:.0f} s)")


# -- 10 --------------------------------------------------------------------


def test_ac10_determinism(verdict):
    mismatched = []
    for name in SCENARIO_NAMES:
        for sup in (True, False):
            cfg = TrialConfig(seed=3, noise="calibrated", supervisor_enabled=sup)
            a, b = run_trial(name, cfg), run_trial(name, cfg)
            if a.trace.text() != b.trace.text() or a.to_dict() != b.to_dict():
                mismatched.append(f"{name}/{sup}")
    cfg = TrialConfig(noise="calibrated")
    tables_equal = run_suite("place_coffee", 3, cfg, ablation=True).to_dict() == run_suite("place_coffee", 3, cfg, ablation=True).to_dict()
    ok = not mismatched and tables_equal
    verdict(10, ok, f"repeated traces identical for {2 * len(SCENARIO_NAMES) - len(mismatched)}/{2 * len(SCENARIO_NAMES)} configs; tables identical={tables_equal}")


# -- 11 --------------------------------------------------------------------


def test_ac11_planner_robustness(verdict):
    rng = np.random.default_rng(1111)
    base = program_to_dict(RulePlanner().plan("Help me tidy up the desk.", TIDY))
    paths = list(_paths(base))
    cases, accepted, invalid, over_budget = 500, 0, 0, 0
    for _ in range(cases):
        max_repairs = int(rng.integers(0, 4))
        responses = []
        for _ in range(max_repairs + 1):
            doc = copy.deepcopy(base)
            k = int(rng.integers(0, 4))
            for i in rng.choice(len(paths), size=k, replace=False):
                try:
                    delete_path(doc, paths[int(i)])
                except (KeyError, IndexError, TypeError):
                    pass
            responses.append(doc)
        it = iter(responses)
        client = httpx.Client(transport=httpx.MockTransport(lambda req: httpx.Response(200, json=next(it))))
        p = ExternalPlanner(PlannerConfig(EXTERNAL, "http://planner.test/plan", 5.0, max_repairs), client)
        try:
            out = p.plan("Help me tidy up the desk.", TIDY)
        except PlannerError:
            pass
        else:
            accepted += 1
            invalid += not validate_program(out, workspace_refs(TIDY)).ok
        over_budget += p.request_count > max_repairs + 1
    ok = invalid == 0 and over_budget == 0
    verdict(11, ok, f"{cases} fuzzed exchanges: {accepted} accepted, {invalid} invalid accepted, {over_budget} over the request budget")
