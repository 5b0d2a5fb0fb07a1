from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from taskloop.grounding import (
    Candidate,
    EmptyCloud,
    EntityTrack,
    GeometricState,
    Grounder,
    GroundingConfig,
    GroundingRequest,
    InsufficientSupport,
    NoCandidates,
    PointCloud,
    RecordedProvider,
    RobotSnapshot,
    ScoreWeights,
    UnknownRef,
    WorkspaceState,
    backproject,
    candidate_subscores,
    derive_relations,
    estimate_state,
    in_view,
    make_handle,
    score_and_select,
    select_best,
    touches_border,
    update_workspace,
)
from taskloop.program import EntitySpec
from taskloop.scenarios import spawn_scenario
from taskloop.sim import CameraModel, NoiseModel, render_observation

from . import oracles

CAM = CameraModel(140.0, 140.0, 79.5, 59.5, 160, 120)
ROBOT = RobotSnapshot((0.0, 0.0, 0.0), {"RIGHT": (0.3, -0.2, 0.9), "LEFT": (0.3, 0.2, 0.9)}, {"RIGHT": "open", "LEFT": "open"})


def gstate(center, half=(0.03, 0.03, 0.05), conf=0.9, axis=(1.0, 0.0, 0.0)) -> GeometricState:
    c = np.asarray(center, dtype=float)
    return GeometricState(c, np.asarray(half, dtype=float), conf, np.asarray(axis, dtype=float), 200, c)


def cand(center, conf=0.9, seg=0.9, **kw) -> Candidate:
    return Candidate(gstate(center, conf=conf, **kw), seg, "cup")


def empty_ws(tick: int = 0) -> WorkspaceState:
    return WorkspaceState(tick, {}, ROBOT)


# -- back-projection --------------------------------------------------------


def test_principal_ray():
    depth = np.zeros((120, 160))
    depth[59, 79] = 1.0
    cam = CameraModel(140.0, 140.0, 79.0, 59.0, 160, 120)
    pts = backproject(np.array([59]), np.array([79]), depth, cam).points
    assert np.allclose(pts, [[0.0, 0.0, 1.0]])


def test_pinhole_offset_pixel():
    cam = CameraModel(100.0, 100.0, 50.0, 40.0, 200, 120)
    depth = np.zeros((120, 200))
    depth[40, 150] = 2.0
    pts = backproject(np.array([40]), np.array([150]), depth, cam).points
    assert np.allclose(pts[0], oracles.pinhole_point(150, 40, 2.0, 100.0, 100.0, 50.0, 40.0))
    assert np.allclose(pts[0], [2.0, 0.0, 2.0])


def test_all_invalid_depth():
    with pytest.raises(EmptyCloud):
        backproject(np.array([1, 2]), np.array([1, 2]), np.zeros((120, 160)), CAM)


def test_mask_outside_image():
    with pytest.raises(ValueError):
        backproject(np.array([200]), np.array([1]), np.ones((120, 160)), CAM)


def test_valid_ratio():
    depth = np.zeros((120, 160))
    depth[10, :10] = 1.0
    cloud = backproject(np.full(20, 10), np.arange(20), depth, CAM)
    assert cloud.source_pixels == 20 and cloud.valid_ratio == 0.5 and cloud.points.shape == (10, 3)


@given(
    arrays(np.float64, 30, elements=st.floats(0.2, 5.0)),
    arrays(np.int64, 30, elements=st.integers(0, 119)),
    arrays(np.int64, 30, elements=st.integers(0, 159)),
)
def test_backproject_matches_scalar_formula(d, rows, cols):
    depth = np.zeros((120, 160))
    depth[rows, cols] = d
    pts = backproject(rows, cols, depth, CAM).points
    for p, r, c in zip(pts, rows, cols):
        assert np.allclose(p, oracles.pinhole_point(c, r, depth[r, c], CAM.fx, CAM.fy, CAM.cx, CAM.cy))


# -- state estimation -------------------------------------------------------


def test_box_centroid_and_axis():
    pts = oracles.box_lattice((1.0, 0.0, 0.8), (0.15, 0.03, 0.03))
    s = estimate_state(PointCloud(pts, len(pts), 1.0), 1.0)
    assert np.linalg.norm(s.centroid - [1.0, 0.0, 0.8]) <= 1e-6
    assert oracles.axis_angle(s.axis, (1.0, 0.0, 0.0)) <= 1e-3
    assert np.isclose(np.linalg.norm(s.axis), 1.0)


def test_confidence_product():
    pts = oracles.box_lattice((0.0, 0.0, 1.0), (0.1, 0.1, 0.1), k=7)
    s = estimate_state(PointCloud(pts, 2 * len(pts), 0.5), 0.9)
    assert s.confidence == pytest.approx(0.45)


def test_insufficient_support():
    pts = np.zeros((5, 3))
    with pytest.raises(InsufficientSupport):
        estimate_state(PointCloud(pts, 5, 1.0), 1.0)


def test_trimming_rejects_outliers():
    pts = oracles.box_lattice((0.0, 0.0, 1.0), (0.05, 0.05, 0.05), k=7)
    pts = np.vstack([pts, [[3.0, 3.0, 3.0]] * 3])
    s = estimate_state(PointCloud(pts, len(pts), 1.0), 1.0)
    assert np.all(s.extent < 0.06)


@given(st.floats(-math.pi, math.pi), st.floats(0.05, 0.3))
def test_elongated_axis_property(yaw, length):
    pts = oracles.box_lattice((0.5, -0.2, 0.9), (length, length / 5, length / 5), yaw)
    s = estimate_state(PointCloud(pts, len(pts), 1.0), 1.0)
    assert oracles.axis_angle(s.axis, (math.cos(yaw), math.sin(yaw), 0.0)) <= 1e-3
    assert 0.0 <= s.confidence <= 1.0 and np.all(s.extent >= 0)


def test_rendered_mask_estimate_inside_box():
    w = spawn_scenario("tidy_desk", 0)
    obs = render_observation(w, ["cup"], NoiseModel(), np.random.default_rng(0))
    (c,) = [c for c in Grounder().candidates(obs, "cup") if c.source == "cup_1"]
    cup = w.obj("cup_1")
    assert cup.contains_point(c.state.centroid, 1e-6)
    assert np.linalg.norm(c.state.center[:2] - np.asarray(cup.position[:2])) < 0.03


# -- scoring ----------------------------------------------------------------


def test_dominant_candidate_selected():
    assert select_best(np.array([[0.2, 0.2, 0.2, 0.2], [0.9, 0.8, 0.7, 0.6]]), np.ones(4)) == 1


def test_tie_goes_to_lower_index():
    assert select_best(np.array([[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]]), np.ones(4)) == 0


def test_no_candidates():
    with pytest.raises(NoCandidates):
        score_and_select(None, [], ScoreWeights(), None, None)
    with pytest.raises(NoCandidates):
        select_best(np.zeros((0, 4)), ScoreWeights())


def test_weights_validation():
    with pytest.raises(ValueError):
        ScoreWeights(0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ScoreWeights(-0.1, 0.5, 0.5, 0.5)


@given(
    arrays(np.float64, st.tuples(st.integers(1, 8), st.just(4)), elements=st.floats(0, 1)),
    arrays(np.float64, 4, elements=st.floats(0.01, 1)),
    st.floats(1e-3, 1e3),
)
def test_argmax_scaling_invariance(table, w, lam):
    k = select_best(table, w)
    assert k == oracles.weighted_argmax(table, w)
    assert select_best(table, w * lam) == k


def test_subscore_definitions():
    track_state = gstate((0.5, 0.0, 0.8))
    track = EntityTrack("obj_1", track_state, track_state.centroid, track_state.center, track_state.extent, stability=0.6)
    near, far = cand((0.6, 0.0, 0.8), seg=0.7), cand((1.0, 0.0, 0.8), seg=0.95)
    s = candidate_subscores(track, [near, far], None, None)
    assert s[0, 0] == 0.7 and s[1, 0] == 0.95
    assert np.all(s[:, 1] == 1.0)
    assert s[0, 2] == pytest.approx(math.exp(-0.1 / 0.2))
    assert s[0, 3] == 0.6 and s[1, 3] == 0.0
    cold = candidate_subscores(None, [near], None, None)
    assert cold[0, 2] == 0.5 and cold[0, 3] == 0.0
    assert np.all((s >= 0) & (s <= 1))


def test_relation_subscore_prefers_satisfying_candidate():
    table = gstate((0.8, 0.0, 0.36), half=(0.35, 0.6, 0.36))
    ws = WorkspaceState(0, {"table_1": EntityTrack("table_1", table, table.centroid, table.center, table.extent)}, ROBOT)
    spec = EntitySpec("obj_1", "cup", relations=(("on", "table_1"),))
    on_table = cand((0.7, 0.0, 0.77), seg=0.8)
    floating = cand((0.7, 0.0, 1.2), seg=0.8)
    assert score_and_select(None, [floating, on_table], ScoreWeights(), spec, ws) == 1


# -- temporal filtering -----------------------------------------------------


def tracked(center=(0.0, 0.0, 0.0), stability=0.5) -> WorkspaceState:
    ws = update_workspace(empty_ws(), {"obj_1": cand(center)}, 1)
    t = ws.tracks["obj_1"]
    return WorkspaceState(1, {"obj_1": EntityTrack("obj_1", t.state, t.centroid, t.center, t.extent, 0, stability)}, ROBOT)


def test_ema_blend():
    ws = update_workspace(tracked(), {"obj_1": cand((0.1, 0.0, 0.0))}, 2)
    assert np.allclose(ws.tracks["obj_1"].centroid, [0.05, 0.0, 0.0])
    assert ws.tracks["obj_1"].stability == pytest.approx(0.8 * 0.5 + 0.2)


def test_jump_rejected():
    ws = update_workspace(tracked(), {"obj_1": cand((0.5, 0.0, 0.0))}, 2)
    t = ws.tracks["obj_1"]
    assert np.allclose(t.centroid, 0.0)
    assert t.stability == pytest.approx(0.4) and t.frames_since_seen == 1


def test_low_confidence_rejected():
    ws = update_workspace(tracked(), {"obj_1": cand((0.01, 0.0, 0.0), conf=0.1)}, 2)
    assert ws.tracks["obj_1"].frames_since_seen == 1


def test_unseen_decay():
    ws = tracked(stability=0.5)
    for t in range(2, 5):
        ws = update_workspace(ws, {"obj_1": None}, t)
    assert ws.tracks["obj_1"].stability == pytest.approx(0.5 * 0.512)
    assert ws.tracks["obj_1"].frames_since_seen == 3


def test_tick_must_advance():
    with pytest.raises(ValueError):
        update_workspace(empty_ws(), {}, 3)


def test_new_track_needs_confidence():
    ws = update_workspace(empty_ws(), {"a": cand((0, 0, 0), conf=0.1), "b": cand((1, 0, 0))}, 1)
    assert set(ws.tracks) == {"b"} and ws.tracks["b"].stability == GroundingConfig().stability_new


def test_filter_reduces_variance():
    rng = np.random.default_rng(0)
    ws = tracked((1.0, 0.0, 0.8))
    raw, filt = [], []
    for t in range(2, 1002):
        z = np.array([1.0, 0.0, 0.8]) + rng.normal(0.0, 0.01, 3)
        ws = update_workspace(ws, {"obj_1": cand(z)}, t)
        raw.append(z)
        filt.append(ws.tracks["obj_1"].centroid)
    assert np.var(np.array(filt), axis=0).sum() < np.var(np.array(raw), axis=0).sum()


def test_out_of_view_track_does_not_age():
    ws = tracked((0.0, 0.0, -5.0))
    cam = spawn_scenario("tidy_desk", 0).head_camera()
    assert not in_view(cam, (0.0, 0.0, -5.0))
    ws = update_workspace(ws, {"obj_1": None}, 2, camera=cam)
    assert ws.tracks["obj_1"].frames_since_seen == 0


def test_touches_border():
    assert touches_border((np.array([0, 1]), np.array([5, 6])), CAM)
    assert not touches_border((np.array([3, 4]), np.array([5, 6])), CAM)
    assert not touches_border((np.zeros(0, dtype=int), np.zeros(0, dtype=int)), CAM)


# -- relations and handles --------------------------------------------------


def test_cup_on_table_gap_zero():
    table = gstate((0.8, 0.0, 0.36), half=(0.35, 0.6, 0.36))
    cup = gstate((0.7, 0.0, 0.77), half=(0.03, 0.03, 0.05))
    tracks = {r: EntityTrack(r, s, s.centroid, s.center, s.extent) for r, s in (("table_1", table), ("cup", cup))}
    rel = derive_relations(WorkspaceState(0, tracks, ROBOT))
    assert rel.pairs[("cup", "table_1")].vertical_gap == pytest.approx(0.0, abs=1e-12)
    assert rel.pairs[("cup", "table_1")].alignment == 0.0


vec3 = st.tuples(*[st.floats(-2, 2)] * 3)
half3 = st.tuples(*[st.floats(0.01, 0.5)] * 3)
axis3 = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda a: sum(x * x for x in a) > 1e-3)


@given(st.lists(st.tuples(vec3, half3, axis3), min_size=2, max_size=5))
def test_relations_match_scalar_oracle(boxes):
    tracks = {}
    for i, (c, h, ax) in enumerate(boxes):
        axis = np.asarray(ax) / np.linalg.norm(ax)
        s = gstate(c, h, axis=axis)
        tracks[f"e{i}"] = EntityTrack(f"e{i}", s, s.centroid, s.center, s.extent)
    rel = derive_relations(WorkspaceState(0, tracks, ROBOT))
    for (a, b), r in rel.pairs.items():
        ta, tb = tracks[a], tracks[b]
        h, gap, dist, align = oracles.pair_relation(ta.center, ta.extent, ta.axis, tb.center, tb.extent, tb.axis)
        assert r.horizontal == pytest.approx(h, abs=1e-12)
        assert r.vertical_gap == pytest.approx(gap, abs=1e-12)
        assert r.centroid_distance == pytest.approx(dist, abs=1e-12)
        assert r.alignment == pytest.approx(align, abs=1e-7)
        back = rel.pairs[(b, a)]
        assert back.horizontal == r.horizontal and back.centroid_distance == pytest.approx(r.centroid_distance)
        # gap(A,B) + gap(B,A) = -(height(A) + height(B))
        assert r.vertical_gap + back.vertical_gap == pytest.approx(-2 * (ta.extent[2] + tb.extent[2]))
    for (arm, ref), d in rel.ee.items():
        assert d == pytest.approx(float(np.linalg.norm(np.asarray(ROBOT.ee[arm]) - tracks[ref].center)))


def test_handle_mirrors_track():
    ws = update_workspace(tracked(), {"obj_1": cand((0.1, 0.0, 0.0))}, 2)
    h = make_handle(ws, "obj_1")
    t = ws.tracks["obj_1"]
    assert h.ref == "obj_1" and np.array_equal(h.centroid, t.centroid) and h.confidence == t.confidence
    assert np.allclose(h.centroid, [0.05, 0.0, 0.0])
    with pytest.raises(UnknownRef):
        make_handle(ws, "ghost")


# -- grounder ---------------------------------------------------------------


def test_grounder_assigns_distinct_candidates():
    w = spawn_scenario("tidy_desk", 0)
    obs = render_observation(w, ["cup", "can"], NoiseModel(), np.random.default_rng(0))
    reqs = [GroundingRequest("obj_1", "cup"), GroundingRequest("obj_2", "can")]
    ws = Grounder().step(empty_ws(), obs, reqs, ROBOT)
    assert ws.tracks["obj_1"].source == "cup_1"
    assert ws.tracks["obj_2"].source == "can_1"


def test_grounder_gate_excludes_far_candidates():
    w = spawn_scenario("tidy_desk", 0)
    obs = render_observation(w, ["cup"], NoiseModel(), np.random.default_rng(0))
    far = np.array([5.0, 5.0, 0.8])
    ws = Grounder().step(empty_ws(), obs, [GroundingRequest("obj_1", "cup", gate=0.2, anchor=far)], ROBOT)
    assert "obj_1" not in ws.tracks


def test_recorded_provider_round_trip(tmp_path):
    w = spawn_scenario("tidy_desk", 1)
    rng = np.random.default_rng(2)
    obs = [render_observation(w, ["cup", "container"], NoiseModel(0.01, 0.0, 0.3, 0.3), rng) for _ in range(3)]
    path = str(tmp_path / "rec.npz")
    RecordedProvider.save(path, obs)
    rp = RecordedProvider.load(path)
    for o in obs:
        r = rp.observe(["cup"])
        assert np.array_equal(r.depth, o.depth) and set(r.candidates) == {"cup"}
        assert [m.rows.tolist() for m in r.candidates["cup"]] == [m.rows.tolist() for m in o.candidates["cup"]]
    with pytest.raises(IndexError):
        rp.observe(["cup"])
