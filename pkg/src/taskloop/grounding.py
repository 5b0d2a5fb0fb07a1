"""Task-conditioned grounding: masks + depth -> point clouds -> per-entity
geometric states, candidate scoring, temporal tracking and pairwise
relations of the object-centric workspace state."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .program import ROBOT_REF, EntitySpec
from .sim import CameraModel, CandidateMask, Observation

__all__ = [
    "Candidate",
    "EmptyCloud",
    "EntityTrack",
    "GroundingRequest",
    "GeometricState",
    "Grounder",
    "GroundingConfig",
    "Handle",
    "InsufficientSupport",
    "NoCandidates",
    "PairRelation",
    "PointCloud",
    "RecordedProvider",
    "RelationTable",
    "RobotSnapshot",
    "ScoreWeights",
    "UnknownRef",
    "WorkspaceState",
    "backproject",
    "candidate_subscores",
    "derive_relations",
    "estimate_state",
    "in_view",
    "touches_border",
    "make_handle",
    "relation_satisfaction",
    "score_and_select",
    "select_best",
    "update_workspace",
]


class EmptyCloud(ValueError):
    pass


class InsufficientSupport(ValueError):
    pass


class NoCandidates(ValueError):
    pass


class UnknownRef(KeyError):
    pass


@dataclass(frozen=True)
class ScoreWeights:
    w_s: float = 0.4
    w_r: float = 0.2
    w_g: float = 0.2
    w_t: float = 0.2

    def __post_init__(self):
        v = self.as_array()
        if np.any(v < 0) or not np.any(v > 0):
            raise ValueError("weights must be non-negative and not all zero")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_s, self.w_r, self.w_g, self.w_t], dtype=float)

    def scaled(self, lam: float) -> "ScoreWeights":
        return ScoreWeights(self.w_s * lam, self.w_r * lam, self.w_g * lam, self.w_t * lam)


@dataclass(frozen=True)
class GroundingConfig:
    min_points: int = 20
    support_norm: int = 200
    alpha: float = 0.5
    jump_thresh: float = 0.25
    q_floor: float = 0.2
    mad_k: float = 3.0
    # Surface-only clouds are often bimodal (a dense front face plus a sparse
    # top face), which drives the MAD toward zero; the floor keeps real
    # surfaces from being trimmed away.
    mad_floor: float = 0.02
    # Ranges are read between these percentiles of the trimmed points so
    # that depth noise does not inflate boxes.
    range_percentiles: tuple[float, float] = (5.0, 95.0)
    max_points: int = 1500
    geo_scale: float = 0.2
    stability_new: float = 0.2
    stability_gain: float = 0.2
    stability_decay: float = 0.8
    weights: ScoreWeights = field(default_factory=ScoreWeights)


# --------------------------------------------------------------------------
# Point clouds and per-candidate states


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3) world frame
    source_pixels: int
    valid_ratio: float


def backproject(rows: np.ndarray, cols: np.ndarray, depth: np.ndarray, cam: CameraModel, max_points: int | None = None) -> PointCloud:
    """Lift masked pixels with valid depth to world-frame points.

    ``rows``/``cols`` index the image (v, u).  Masks larger than
    ``max_points`` are subsampled with a fixed stride before lifting.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= depth.shape[0] or cols.max() >= depth.shape[1]):
        raise ValueError("mask pixels outside the image")
    if max_points is not None and rows.size > max_points:
        stride = math.ceil(rows.size / max_points)
        rows, cols = rows[::stride], cols[::stride]
    d = depth[rows, cols]
    valid = d > 0
    n_src = int(rows.size)
    if not np.any(valid):
        raise EmptyCloud("no valid depth under the mask")
    r, c, d = rows[valid].astype(float), cols[valid].astype(float), d[valid]
    pc = np.empty((d.shape[0], 3))
    pc[:, 0] = (c - cam.cx) * d / cam.fx
    pc[:, 1] = (r - cam.cy) * d / cam.fy
    pc[:, 2] = d
    pts = pc @ cam.rotation.T + cam.origin
    return PointCloud(pts, n_src, float(d.shape[0]) / n_src)


@dataclass(frozen=True)
class GeometricState:
    centroid: np.ndarray  # point mean
    extent: np.ndarray  # half-ranges of the MAD-trimmed points
    confidence: float
    axis: np.ndarray  # unit principal axis
    support: int
    # Mid-range of the trimmed points; with surface-only clouds the point mean
    # is pulled toward the camera-facing faces, so tops/bottoms use this.
    center: np.ndarray

    @property
    def top(self) -> float:
        return float(self.center[2] + self.extent[2])

    @property
    def bottom(self) -> float:
        return float(self.center[2] - self.extent[2])


def _trim(points: np.ndarray, k: float, floor: float) -> np.ndarray:
    # Radial, so the kept set (and hence the principal axis) is unaffected by
    # how the object is oriented relative to the world axes.
    r = np.linalg.norm(points - np.median(points, axis=0), axis=1)
    mad = max(float(np.median(r)), floor)
    keep = r <= k * mad
    return points[keep] if np.count_nonzero(keep) >= 2 else points


def _principal_axis(points: np.ndarray) -> np.ndarray:
    cov = np.cov(points, rowvar=False)
    w, v = np.linalg.eigh(cov)
    a = v[:, int(np.argmax(w))]
    # canonical sign: largest-magnitude component positive
    if a[int(np.argmax(np.abs(a)))] < 0:
        a = -a
    return a / np.linalg.norm(a)


def estimate_state(cloud: PointCloud, seg_conf: float, cfg: GroundingConfig = GroundingConfig()) -> GeometricState:
    pts = cloud.points
    n = pts.shape[0]
    if n < cfg.min_points:
        raise InsufficientSupport(f"{n} points < {cfg.min_points}")
    kept = _trim(pts, cfg.mad_k, cfg.mad_floor)
    lo, hi = np.percentile(kept, cfg.range_percentiles, axis=0)
    q = float(seg_conf) * cloud.valid_ratio * min(1.0, n / cfg.support_norm)
    return GeometricState(
        centroid=pts.mean(axis=0),
        extent=(hi - lo) / 2.0,
        confidence=min(max(q, 0.0), 1.0),
        axis=_principal_axis(kept),
        support=n,
        center=(hi + lo) / 2.0,
    )


@dataclass(frozen=True)
class Candidate:
    state: GeometricState
    seg_conf: float
    query: str
    rows: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.intp))
    cols: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.intp))
    source: str | None = None  # provenance carried for traces only


# --------------------------------------------------------------------------
# Workspace state


@dataclass(frozen=True)
class RobotSnapshot:
    base: tuple[float, float, float]
    ee: Mapping[str, tuple[float, float, float]]
    gripper: Mapping[str, str]
    held: tuple[str, str] | None = None  # (arm, ref) as believed by the agent
    stance_ok: bool = True
    shoulders: Mapping[str, tuple[float, float, float]] = field(default_factory=dict)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.base[0], self.base[1], 0.0])


@dataclass(frozen=True)
class EntityTrack:
    ref: str
    state: GeometricState  # last accepted raw measurement
    centroid: np.ndarray  # filtered
    center: np.ndarray  # filtered
    extent: np.ndarray  # filtered
    frames_since_seen: int = 0
    stability: float = 0.2
    seen: bool = True  # accepted a measurement this tick
    mask: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)
    source: str | None = field(default=None, compare=False)
    seg_conf: float = 1.0  # segmentation confidence of the last accepted mask

    @property
    def confidence(self) -> float:
        return self.state.confidence

    @property
    def axis(self) -> np.ndarray:
        return self.state.axis

    @property
    def top(self) -> float:
        return float(self.center[2] + self.extent[2])

    @property
    def bottom(self) -> float:
        return float(self.center[2] - self.extent[2])


@dataclass(frozen=True)
class PairRelation:
    horizontal: float
    vertical_gap: float  # bottom(a) - top(b)
    centroid_distance: float
    alignment: float  # radians in [0, pi/2]


@dataclass(frozen=True)
class RelationTable:
    pairs: Mapping[tuple[str, str], PairRelation]
    ee: Mapping[tuple[str, str], float]


@dataclass(frozen=True)
class WorkspaceState:
    tick: int
    tracks: Mapping[str, EntityTrack]
    robot: RobotSnapshot

    @cached_property
    def relations(self) -> RelationTable:
        return derive_relations(self)

    def track(self, ref: str) -> EntityTrack:
        try:
            return self.tracks[ref]
        except KeyError:
            raise UnknownRef(ref) from None

    def with_robot(self, robot: RobotSnapshot) -> "WorkspaceState":
        return WorkspaceState(self.tick, self.tracks, robot)

    def without(self, ref: str) -> "WorkspaceState":
        tracks = {k: v for k, v in self.tracks.items() if k != ref}
        return WorkspaceState(self.tick, tracks, self.robot)

    def shifted(self, ref: str, delta) -> "WorkspaceState":
        """Translate one track by ``delta`` (motion prediction for an object
        the robot is carrying)."""
        t = self.tracks.get(ref)
        if t is None:
            return self
        d = np.asarray(delta, dtype=float)
        st = replace(t.state, centroid=t.state.centroid + d, center=t.state.center + d)
        moved = replace(t, state=st, centroid=t.centroid + d, center=t.center + d)
        return WorkspaceState(self.tick, {**self.tracks, ref: moved}, self.robot)


def pair_relation(a: EntityTrack, b: EntityTrack) -> PairRelation:
    dx = float(a.center[0] - b.center[0])
    dy = float(a.center[1] - b.center[1])
    cos = abs(float(np.dot(a.axis, b.axis)))
    return PairRelation(
        horizontal=math.hypot(dx, dy),
        vertical_gap=a.bottom - b.top,
        centroid_distance=float(np.linalg.norm(a.center - b.center)),
        alignment=math.acos(min(1.0, cos)),
    )


def derive_relations(ws: WorkspaceState) -> RelationTable:
    refs = sorted(ws.tracks)
    pairs = {}
    for a in refs:
        for b in refs:
            if a != b:
                pairs[(a, b)] = pair_relation(ws.tracks[a], ws.tracks[b])
    ee = {}
    for arm, p in sorted(ws.robot.ee.items()):
        for r in refs:
            ee[(arm, r)] = float(np.linalg.norm(np.asarray(p) - ws.tracks[r].center))
    return RelationTable(pairs, ee)


# --------------------------------------------------------------------------
# Scoring


def relation_satisfaction(keyword: str, cand_center: np.ndarray, cand_extent: np.ndarray, other: EntityTrack | RobotSnapshot) -> float:
    """Geometric degree in [0, 1] to which a candidate satisfies one relation."""
    if isinstance(other, RobotSnapshot):
        oc = other.position
        ox, oy = oc[0], oc[1]
        top = 0.0
    else:
        ox, oy = float(other.center[0]), float(other.center[1])
        top = other.top
    h = math.hypot(float(cand_center[0]) - ox, float(cand_center[1]) - oy)
    kw = keyword.lower()
    if kw in ("on", "on_top_of", "supported_by"):
        gap = abs(float(cand_center[2] - cand_extent[2]) - top)
        return math.exp(-gap / 0.05)
    if kw in ("in", "inside"):
        return math.exp(-h / 0.1)
    if kw in ("near", "next_to", "beside"):
        return 1.0 if h <= 0.3 else math.exp(-(h - 0.3) / 0.2)
    if kw == "far_from":
        return 1.0 if h >= 0.5 else h / 0.5
    return 0.5


def candidate_subscores(
    track: EntityTrack | None,
    cands: Sequence[Candidate],
    spec: EntitySpec | None,
    ws: WorkspaceState | None,
    cfg: GroundingConfig = GroundingConfig(),
) -> np.ndarray:
    """(K, 4) table of [S_sem, S_rel, S_geo, S_temp] in [0, 1]."""
    out = np.zeros((len(cands), 4))
    rel_targets = []
    if spec is not None and ws is not None:
        for kw, ref in spec.relations:
            if ref == ROBOT_REF:
                rel_targets.append((kw, ws.robot))
            elif ref in ws.tracks:
                rel_targets.append((kw, ws.tracks[ref]))
    for k, c in enumerate(cands):
        out[k, 0] = min(max(c.seg_conf, 0.0), 1.0)
        if rel_targets:
            out[k, 1] = sum(relation_satisfaction(kw, c.state.center, c.state.extent, o) for kw, o in rel_targets) / len(rel_targets)
        else:
            out[k, 1] = 1.0
        if track is None:
            out[k, 2] = 0.5
            out[k, 3] = 0.0
        else:
            d = float(np.linalg.norm(c.state.centroid - track.centroid))
            out[k, 2] = math.exp(-d / cfg.geo_scale)
            jump = float(np.linalg.norm(c.state.centroid - track.state.centroid))
            out[k, 3] = track.stability if jump <= cfg.jump_thresh else 0.0
    return out


def select_best(subscores: np.ndarray, weights: ScoreWeights | np.ndarray) -> int:
    """Argmax of the weighted sum; ties go to the lowest index."""
    w = weights.as_array() if isinstance(weights, ScoreWeights) else np.asarray(weights, dtype=float)
    if subscores.shape[0] == 0:
        raise NoCandidates("empty candidate list")
    s = subscores @ w
    return int(np.argmax(s))  # numpy argmax returns the first maximum


def score_and_select(
    track: EntityTrack | None,
    cands: Sequence[Candidate],
    weights: ScoreWeights,
    spec: EntitySpec | None,
    ws: WorkspaceState | None,
    cfg: GroundingConfig = GroundingConfig(),
) -> int:
    if not cands:
        raise NoCandidates("no candidates")
    return select_best(candidate_subscores(track, cands, spec, ws, cfg), weights)


# --------------------------------------------------------------------------
# Temporal filtering


def update_workspace(
    ws: WorkspaceState,
    selections: Mapping[str, Candidate | None],
    tick: int,
    robot: RobotSnapshot | None = None,
    cfg: GroundingConfig = GroundingConfig(),
    camera: CameraModel | None = None,
) -> WorkspaceState:
    """Blend selected measurements into tracks.

    ``selections`` maps every entity queried this tick to its chosen
    candidate, or ``None`` when nothing was found.  Entities not queried are
    left untouched.  With ``camera`` given, a missed entity whose track lies
    outside the field of view does not age.
    """
    if tick != ws.tick + 1:
        raise ValueError(f"tick must advance by one (ws.tick={ws.tick}, got {tick})")
    tracks = {r: (replace(t, seen=False) if t.seen else t) for r, t in ws.tracks.items()}
    for ref in sorted(selections):
        cand = selections[ref]
        prev = ws.tracks.get(ref)
        if prev is None:
            if cand is not None and cand.state.confidence >= cfg.q_floor:
                s = cand.state
                tracks[ref] = EntityTrack(
                    ref, s, s.centroid, s.center, s.extent, 0, cfg.stability_new, True, (cand.rows, cand.cols), cand.source, cand.seg_conf
                )
            continue
        accepted = False
        if cand is not None and cand.state.confidence >= cfg.q_floor:
            if float(np.linalg.norm(cand.state.centroid - prev.state.centroid)) <= cfg.jump_thresh:
                accepted = True
            elif _coming_into_view(prev, cand, camera):
                accepted = True
        if accepted:
            s = cand.state
            a = cfg.alpha
            tracks[ref] = EntityTrack(
                ref,
                s,
                a * s.centroid + (1 - a) * prev.centroid,
                a * s.center + (1 - a) * prev.center,
                a * s.extent + (1 - a) * prev.extent,
                0,
                cfg.stability_decay * prev.stability + cfg.stability_gain,
                True,
                (cand.rows, cand.cols),
                cand.source,
                cand.seg_conf,
            )
        elif camera is not None and not in_view(camera, prev.center):
            # Out of the field of view: nothing was expected, so nothing ages.
            tracks[ref] = replace(prev, seen=False)
        else:
            tracks[ref] = replace(
                prev, frames_since_seen=prev.frames_since_seen + 1, stability=prev.stability * cfg.stability_decay, seen=False
            )
    return WorkspaceState(tick, tracks, robot if robot is not None else ws.robot)


def _coming_into_view(prev: EntityTrack, cand: Candidate, camera: CameraModel | None) -> bool:
    """A jump away from a mask cut by the image border is the object coming
    into view, not a swap, when the new mask is larger and segmented with at
    least the same confidence."""
    if camera is None or prev.mask is None or not touches_border(prev.mask, camera):
        return False
    return cand.rows.size > prev.mask[0].size and cand.seg_conf >= prev.seg_conf


def touches_border(mask: tuple[np.ndarray, np.ndarray], camera: CameraModel) -> bool:
    """Whether a mask reaches the image edge, so its estimate is truncated."""
    rows, cols = mask
    if rows.size == 0:
        return False
    return bool(rows.min() <= 0 or cols.min() <= 0 or rows.max() >= camera.height - 1 or cols.max() >= camera.width - 1)


def in_view(camera: CameraModel, point) -> bool:
    """Whether a world point projects inside the image in front of the camera."""
    u, v, z = camera.project(np.asarray(point, dtype=float).reshape(1, 3))
    return bool(z[0] > 0.05 and 0.0 <= u[0] < camera.width and 0.0 <= v[0] < camera.height)


# --------------------------------------------------------------------------
# Handles


@dataclass(frozen=True)
class Handle:
    ref: str
    mask: tuple[np.ndarray, np.ndarray] | None
    centroid: np.ndarray
    extent: np.ndarray
    confidence: float
    center: np.ndarray

    @property
    def top(self) -> float:
        return float(self.center[2] + self.extent[2])

    @property
    def bottom(self) -> float:
        return float(self.center[2] - self.extent[2])


def make_handle(ws: WorkspaceState, ref: str) -> Handle:
    t = ws.track(ref)
    return Handle(ref, t.mask, t.centroid.copy(), t.extent.copy(), t.confidence, t.center.copy())


# --------------------------------------------------------------------------
# Per-observation driver


@dataclass(frozen=True)
class GroundingRequest:
    ref: str
    phrase: str
    spec: EntitySpec | None = None
    gate: float | None = None  # only candidates centered this close to the track (or anchor)
    anchor: np.ndarray | None = None  # gate center for an entity without a track


class Grounder:
    """Runs one grounding cycle per observation for a set of entity requests.

    Entities that share a query phrase compete for its candidates; each
    candidate is assigned to at most one entity, best pairs first.
    """

    def __init__(self, cfg: GroundingConfig = GroundingConfig()):
        self.cfg = cfg

    def candidates(self, obs: Observation, phrase: str) -> list[Candidate]:
        out = []
        for m in obs.candidates.get(phrase, ()):
            try:
                cloud = backproject(m.rows, m.cols, obs.depth, obs.camera, self.cfg.max_points)
                st = estimate_state(cloud, m.confidence, self.cfg)
            except (EmptyCloud, InsufficientSupport):
                continue
            out.append(Candidate(st, m.confidence, phrase, m.rows, m.cols, m.source))
        return out

    def step(self, ws: WorkspaceState, obs: Observation, requests: Sequence[GroundingRequest], robot: RobotSnapshot) -> WorkspaceState:
        groups: dict[str, list[GroundingRequest]] = {}
        for r in requests:
            if r.ref != ROBOT_REF:
                groups.setdefault(r.phrase, []).append(r)
        selections: dict[str, Candidate | None] = {}
        for phrase, reqs in groups.items():
            cands = self.candidates(obs, phrase)
            reqs = sorted(reqs, key=lambda r: r.ref)
            if not cands:
                for r in reqs:
                    selections[r.ref] = None
                continue
            w = self.cfg.weights.as_array()
            scores = np.stack([candidate_subscores(ws.tracks.get(r.ref), cands, r.spec, ws, self.cfg) @ w for r in reqs])
            for i, r in enumerate(reqs):
                prev = ws.tracks.get(r.ref)
                center = prev.center if prev is not None else r.anchor
                if r.gate is not None and center is not None:
                    far = [float(np.linalg.norm(c.state.center - center)) > r.gate for c in cands]
                    scores[i, np.asarray(far, dtype=bool)] = -np.inf
            free_e = list(range(len(reqs)))
            free_c = list(range(len(cands)))
            while free_e and free_c:
                sub = scores[np.ix_(free_e, free_c)]
                i, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
                if not np.isfinite(sub[i, j]):
                    break
                selections[reqs[free_e[i]].ref] = cands[free_c[j]]
                del free_e[i]
                del free_c[j]
            for i in free_e:
                selections[reqs[i].ref] = None
        return update_workspace(ws, selections, ws.tick + 1, robot, self.cfg, obs.camera)


class RecordedProvider:
    """Replays stored observations in order, for regression fixtures."""

    def __init__(self, observations: Iterable[Observation]):
        self._obs = list(observations)
        self._i = 0

    def observe(self, queries: Sequence[str]) -> Observation:
        if self._i >= len(self._obs):
            raise IndexError("recording exhausted")
        o = self._obs[self._i]
        self._i += 1
        keep = {q: o.candidates.get(q, ()) for q in queries}
        return Observation(o.tick, o.depth, keep, o.camera)

    @staticmethod
    def save(path: str, observations: Sequence[Observation]) -> None:
        arrays: dict[str, Any] = {}
        meta = []
        for i, o in enumerate(observations):
            arrays[f"depth_{i}"] = o.depth
            arrays[f"pose_{i}"] = o.camera.pose
            cands = []
            for q, ms in o.candidates.items():
                for j, m in enumerate(ms):
                    key = f"mask_{i}_{len(cands)}"
                    arrays[key] = np.stack([m.rows, m.cols])
                    cands.append([q, float(m.confidence), key, m.source or ""])
            c = o.camera
            meta.append({"tick": o.tick, "cands": cands, "cam": [c.fx, c.fy, c.cx, c.cy, c.width, c.height]})
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path: str) -> "RecordedProvider":
        data = np.load(path)
        meta = json.loads(bytes(data["meta"]).decode())
        obs = []
        for i, m in enumerate(meta):
            fx, fy, cx, cy, wdt, hgt = m["cam"]
            cam = CameraModel(fx, fy, cx, cy, int(wdt), int(hgt), data[f"pose_{i}"])
            cands: dict[str, list[CandidateMask]] = {}
            for q, conf, key, src in m["cands"]:
                rc = data[key]
                cands.setdefault(q, []).append(CandidateMask(rc[0], rc[1], conf, q, src or None))
            obs.append(Observation(m["tick"], data[f"depth_{i}"], {q: tuple(v) for q, v in cands.items()}, cam))
        return cls(obs)
