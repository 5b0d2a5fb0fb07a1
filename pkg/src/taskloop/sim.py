"""Deterministic kinematic scene: upright boxes, a humanoid with two arms, a
head-mounted pinhole camera, and a noisy segmentation provider.

Everything is a value: :func:`step` returns a new :class:`SimWorld`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .geometry import box_corners, footprint_contains, ray_box_depth, yaw_rotate

__all__ = [
    "BODY",
    "BodyGeometry",
    "CameraModel",
    "CandidateMask",
    "ControlCommand",
    "NoiseModel",
    "Observation",
    "RenderCache",
    "RobotState",
    "SimObject",
    "SimWorld",
    "UnknownObject",
    "VelocityCommand",
    "render_observation",
    "resolve_support",
    "step",
]

DT = 0.1
FLOOR_ID = "floor"


class UnknownObject(KeyError):
    pass


@dataclass(frozen=True)
class BodyGeometry:
    """Fixed kinematic layout of the humanoid, in the base frame."""

    shoulder: Mapping[str, tuple[float, float, float]] = field(
        default_factory=lambda: {"RIGHT": (0.0, -0.2, 1.0), "LEFT": (0.0, 0.2, 1.0)}
    )
    ee_home: Mapping[str, tuple[float, float, float]] = field(
        default_factory=lambda: {"RIGHT": (0.25, -0.22, 0.85), "LEFT": (0.25, 0.22, 0.85)}
    )
    reach: float = 0.85
    base_radius: float = 0.22
    head: tuple[float, float, float] = (0.08, 0.0, 1.25)
    head_pitch: float = math.radians(40.0)
    grasp_margin: float = 0.02

    def to_world(self, base: tuple[float, float, float], p) -> np.ndarray:
        x, y, yaw = base
        wx, wy = yaw_rotate(p[0], p[1], yaw)
        return np.array([x + wx, y + wy, p[2]])

    def to_body(self, base: tuple[float, float, float], p) -> np.ndarray:
        x, y, yaw = base
        bx, by = yaw_rotate(p[0] - x, p[1] - y, -yaw)
        return np.array([bx, by, p[2]])

    def shoulder_world(self, base, arm: str) -> np.ndarray:
        return self.to_world(base, self.shoulder[arm])


BODY = BodyGeometry()


@dataclass(frozen=True)
class SimObject:
    id: str
    category: str
    position: tuple[float, float, float]  # box centre, world frame
    yaw: float
    extent: tuple[float, float, float]  # half sizes
    is_container: bool = False
    graspable: bool = False
    support_of: str | None = None
    renderable: bool = True
    handover_zone: tuple[float, float, float, float, float, float] | None = None  # forward offset, z, half xyz

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise ValueError(f"{self.id}: extent components must be > 0")

    @property
    def top(self) -> float:
        return self.position[2] + self.extent[2]

    @property
    def bottom(self) -> float:
        return self.position[2] - self.extent[2]

    def contains_point(self, p, margin: float = 0.0) -> bool:
        return footprint_contains(self.position, self.yaw, self.extent, p[0], p[1], margin) and (
            self.bottom - margin <= p[2] <= self.top + margin
        )

    def zone_contains(self, p) -> bool:
        if self.handover_zone is None:
            return False
        fwd, zc, hx, hy, hz = self.handover_zone[0], self.handover_zone[1], *self.handover_zone[2:]
        ox, oy = yaw_rotate(fwd, 0.0, self.yaw)
        center = (self.position[0] + ox, self.position[1] + oy, zc)
        return footprint_contains(center, self.yaw, (hx, hy), p[0], p[1]) and abs(p[2] - zc) <= hz


@dataclass(frozen=True)
class RobotState:
    base: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cmd_echo: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ee_body: Mapping[str, tuple[float, float, float]] = field(default_factory=lambda: dict(BODY.ee_home))
    gripper: Mapping[str, str] = field(default_factory=lambda: {"RIGHT": "open", "LEFT": "open"})
    held: tuple[str, str] | None = None  # (arm, object id)
    held_offset: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # body-frame offset + yaw offset
    stance_ok: bool = True

    def ee_world(self, arm: str) -> np.ndarray:
        return BODY.to_world(self.base, self.ee_body[arm])

    def holding(self, arm: str | None = None) -> str | None:
        if self.held is None:
            return None
        if arm is not None and self.held[0] != arm:
            return None
        return self.held[1]


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray = field(default_factory=lambda: np.eye(4), compare=False)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def origin(self) -> np.ndarray:
        return self.pose[:3, 3]

    def at(self, pose: np.ndarray) -> "CameraModel":
        return replace(self, pose=pose)

    def ray_dirs(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """World-frame ray directions with unit camera-z component."""
        d = np.stack([(cols - self.cx) / self.fx, (rows - self.cy) / self.fy, np.ones(rows.shape[0])], axis=1)
        return d @ self.rotation.T

    def project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points -> (u, v, depth)."""
        pc = (pts - self.origin) @ self.rotation
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return u, v, z


def head_camera_pose(base: tuple[float, float, float], body: BodyGeometry = BODY) -> np.ndarray:
    x, y, yaw = base
    pitch = body.head_pitch
    fwd = np.array([math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), -math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = fwd
    pose[:3, 3] = body.to_world(base, body.head)
    return pose


@dataclass(frozen=True)
class NoiseModel:
    depth_sigma: float = 0.0
    pixel_dropout: float = 0.0
    mask_miss_prob: float = 0.0
    distractor_prob: float = 0.0
    occlusion_bursts: tuple[tuple[str, int, int], ...] = ()

    def __post_init__(self):
        for name in ("pixel_dropout", "mask_miss_prob", "distractor_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.depth_sigma < 0:
            raise ValueError("depth_sigma must be >= 0")

    def occluded(self, obj_id: str, tick: int) -> bool:
        return any(e == obj_id and s <= tick < s + d for e, s, d in self.occlusion_bursts)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NoiseModel":
        bursts = tuple((str(e), int(s), int(n)) for e, s, n in d.get("occlusion_bursts", ()))
        return cls(
            depth_sigma=float(d.get("depth_sigma", 0.0)),
            pixel_dropout=float(d.get("pixel_dropout", 0.0)),
            mask_miss_prob=float(d.get("mask_miss_prob", 0.0)),
            distractor_prob=float(d.get("distractor_prob", 0.0)),
            occlusion_bursts=bursts,
        )

    def to_dict(self) -> dict:
        return {
            "depth_sigma": self.depth_sigma,
            "pixel_dropout": self.pixel_dropout,
            "mask_miss_prob": self.mask_miss_prob,
            "distractor_prob": self.distractor_prob,
            "occlusion_bursts": [list(b) for b in self.occlusion_bursts],
        }


@dataclass(frozen=True)
class CandidateMask:
    rows: np.ndarray
    cols: np.ndarray
    confidence: float
    query: str
    # Ground-truth provenance for tests and traces; perception never reads it.
    source: str | None = None

    @property
    def size(self) -> int:
        return int(self.rows.shape[0])

    def as_image(self, height: int, width: int) -> np.ndarray:
        img = np.zeros((height, width), dtype=bool)
        img[self.rows, self.cols] = True
        return img


@dataclass(frozen=True)
class Observation:
    tick: int
    depth: np.ndarray
    candidates: Mapping[str, tuple[CandidateMask, ...]]
    camera: CameraModel


@dataclass(frozen=True)
class VelocityCommand:
    forward: float = 0.0
    lateral: float = 0.0
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class ControlCommand:
    base: VelocityCommand = VelocityCommand()
    gait_id: int | None = None
    primitive: str | None = None
    arm_targets: Mapping[str, tuple[float, float, float]] = field(default_factory=dict)
    gripper: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "base": [self.base.forward, self.base.lateral, self.base.yaw_rate],
            "gait_id": self.gait_id,
            "primitive": self.primitive,
            "arm_targets": {k: [round(float(c), 6) for c in v] for k, v in sorted(self.arm_targets.items())},
            "gripper": dict(sorted(self.gripper.items())),
        }


@dataclass(frozen=True)
class SimWorld:
    objects: tuple[SimObject, ...]
    robot: RobotState
    camera: CameraModel  # intrinsics; pose follows the head every tick
    clock: int = 0
    rng_stream: int = 0
    phrase_table: Mapping[str, tuple[tuple[str, float], ...]] = field(default_factory=dict)
    stance_faults: tuple[tuple[int, int], ...] = ()
    scene_version: int = 0
    telemetry: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise ValueError("object ids must be unique")

    def obj(self, obj_id: str) -> SimObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise UnknownObject(obj_id)

    def has(self, obj_id: str) -> bool:
        return any(o.id == obj_id for o in self.objects)

    def head_camera(self) -> CameraModel:
        return self.camera.at(head_camera_pose(self.robot.base))

    def matches(self, phrase: str) -> list[tuple[SimObject, float]]:
        """Objects a phrase grounds to, with the provider's match quality."""
        table = self.phrase_table.get(phrase)
        if table is not None:
            return [(self.obj(i), q) for i, q in table if self.has(i)]
        out = [(o, 1.0) for o in self.objects if o.category == phrase and o.renderable]
        if not out and phrase == "container":
            out = [(o, 0.9) for o in self.objects if o.is_container and o.renderable]
        return out


# --------------------------------------------------------------------------
# Dynamics


def _stance_ok(faults: Sequence[tuple[int, int]], tick: int) -> bool:
    return not any(s <= tick < s + d for s, d in faults)


def settle(objects: list[SimObject], idx: int) -> SimObject:
    """Drop ``objects[idx]`` onto the highest surface under its horizontal
    centroid, or let a person receive it inside their handover zone."""
    o = objects[idx]
    for other in objects:
        if other.id != o.id and other.zone_contains(o.position):
            return replace(o, support_of=other.id)
    best: SimObject | None = None
    for other in objects:
        if other.id == o.id or other.graspable and other.support_of is None:
            continue
        if not footprint_contains(other.position, other.yaw, other.extent, o.position[0], o.position[1]):
            continue
        if other.top > o.bottom + 0.05:
            continue
        if best is None or other.top > best.top:
            best = other
    if best is None:
        raise RuntimeError(f"{o.id}: nothing to settle on")
    z = best.top + o.extent[2]
    return replace(o, position=(o.position[0], o.position[1], z), support_of=best.id)


def step(w: SimWorld, cmd: ControlCommand, dt: float = DT) -> SimWorld:
    """Advance one tick: integrate the base, move arms, actuate grippers, keep
    held objects attached and settle released ones."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    r = w.robot
    telemetry: dict[str, Any] = {}
    x, y, yaw = r.base
    v = cmd.base
    dx, dy = yaw_rotate(v.forward, v.lateral, yaw)
    base = (x + dx * dt, y + dy * dt, yaw + v.yaw_rate * dt)
    moved = any(abs(c) > 0 for c in (v.forward, v.lateral, v.yaw_rate))

    ee_body = dict(r.ee_body)
    for arm, target in cmd.arm_targets.items():
        p = BODY.to_body(base, target)
        sh = np.asarray(BODY.shoulder[arm])
        d = p - sh
        n = float(np.linalg.norm(d))
        if n > BODY.reach:
            p = sh + d * (BODY.reach / n)
            telemetry.setdefault("clamped", []).append(arm)
        ee_body[arm] = (float(p[0]), float(p[1]), float(p[2]))

    objects = list(w.objects)
    gripper = dict(r.gripper)
    held, held_offset = r.held, r.held_offset
    # Only camera or object motion invalidates rendered masks.
    changed = moved

    robot = replace(r, base=base, cmd_echo=(v.forward, v.lateral, v.yaw_rate), ee_body=ee_body)
    for arm, g in cmd.gripper.items():
        if g == "close" and gripper[arm] != "closed":
            gripper[arm] = "closed"
            if held is None:
                ee = robot.ee_world(arm)
                best, best_d = None, math.inf
                for i, o in enumerate(objects):
                    if not o.graspable or not o.contains_point(ee, BODY.grasp_margin):
                        continue
                    d = float(np.linalg.norm(np.asarray(o.position) - ee))
                    if d < best_d:
                        best, best_d = i, d
                if best is not None:
                    o = objects[best]
                    off = BODY.to_body(base, o.position) - BODY.to_body(base, ee)
                    held = (arm, o.id)
                    held_offset = (float(off[0]), float(off[1]), float(off[2]), o.yaw - base[2])
                    objects[best] = replace(o, support_of=None)
                    telemetry["grasped"] = o.id
                    changed = True
        elif g == "open" and gripper[arm] != "open":
            gripper[arm] = "open"
            if held is not None and held[0] == arm:
                i = next(k for k, o in enumerate(objects) if o.id == held[1])
                objects[i] = settle(objects, i)
                telemetry["released"] = held[1]
                held, held_offset = None, (0.0, 0.0, 0.0, 0.0)
                changed = True

    if held is not None:
        arm, oid = held
        i = next(k for k, o in enumerate(objects) if o.id == oid)
        ee_b = np.asarray(ee_body[arm]) + np.asarray(held_offset[:3])
        pos = BODY.to_world(base, ee_b)
        new = (float(pos[0]), float(pos[1]), float(pos[2]))
        if new != objects[i].position:
            changed = True
        objects[i] = replace(objects[i], position=new, yaw=base[2] + held_offset[3])

    tick = w.clock + 1
    robot = replace(robot, gripper=gripper, held=held, held_offset=held_offset, stance_ok=_stance_ok(w.stance_faults, tick))
    return replace(
        w,
        objects=tuple(objects),
        robot=robot,
        clock=tick,
        scene_version=w.scene_version + (1 if changed else 0),
        telemetry=telemetry,
    )


def resolve_support(w: SimWorld, obj_id: str) -> str | None:
    """Ground-truth immediate support of an object; ``None`` while held."""
    o = w.obj(obj_id)
    if w.robot.held is not None and w.robot.held[1] == obj_id:
        return None
    return o.support_of


# --------------------------------------------------------------------------
# Rendering


class RenderCache:
    """Noiseless per-object masks for one scene version."""

    def __init__(self) -> None:
        self.version: int | None = None
        self.masks: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self.rects: dict[str, tuple[int, int, int, int] | None] = {}

    def reset(self, version: int) -> None:
        if version != self.version:
            self.version = version
            self.masks = {}
            self.rects = {}


def _rect(o: SimObject, cam: CameraModel) -> tuple[int, int, int, int] | None:
    corners = box_corners(o.position, o.yaw, o.extent)
    u, v, z = cam.project(corners)
    if np.all(z <= 0.05):
        return None
    if np.any(z <= 0.05):
        r0, r1, c0, c1 = 0, cam.height - 1, 0, cam.width - 1
    else:
        c0, c1 = int(math.floor(u.min())), int(math.ceil(u.max()))
        r0, r1 = int(math.floor(v.min())), int(math.ceil(v.max()))
    c0, c1 = max(c0, 0), min(c1, cam.width - 1)
    r0, r1 = max(r0, 0), min(r1, cam.height - 1)
    if c0 > c1 or r0 > r1:
        return None
    return r0, r1, c0, c1


def _overlap(a, b) -> bool:
    return not (a[1] < b[0] or b[1] < a[0] or a[3] < b[2] or b[3] < a[2])


def _render_object(w: SimWorld, cam: CameraModel, o: SimObject, cache: RenderCache):
    if o.id in cache.masks:
        return cache.masks[o.id]
    rects = cache.rects
    for other in w.objects:
        if other.renderable and other.id not in rects:
            rects[other.id] = _rect(other, cam)
    rect = rects.get(o.id)
    empty = (np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp), np.zeros(0))
    if rect is None:
        cache.masks[o.id] = empty
        return empty
    r0, r1, c0, c1 = rect
    rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    rows, cols = rr.ravel(), cc.ravel()
    dirs = cam.ray_dirs(rows.astype(float), cols.astype(float))
    t = ray_box_depth(cam.origin, dirs, o.position, o.yaw, o.extent)
    keep = np.isfinite(t)
    rows, cols, t, dirs = rows[keep], cols[keep], t[keep], dirs[keep]
    for other in w.objects:
        if other.id == o.id or not other.renderable or rows.size == 0:
            continue
        orect = rects.get(other.id)
        if orect is None or not _overlap(rect, orect):
            continue
        t2 = ray_box_depth(cam.origin, dirs, other.position, other.yaw, other.extent)
        vis = ~(t2 < t)
        rows, cols, t, dirs = rows[vis], cols[vis], t[vis], dirs[vis]
    out = (rows, cols, t)
    cache.masks[o.id] = out
    return out


def _first_hit(w: SimWorld, cam: CameraModel, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    dirs = cam.ray_dirs(rows.astype(float), cols.astype(float))
    t = np.full(rows.shape[0], np.inf)
    for o in w.objects:
        if o.renderable:
            t = np.minimum(t, ray_box_depth(cam.origin, dirs, o.position, o.yaw, o.extent))
    return t


MIN_CANDIDATE_PIXELS = 4


def render_observation(
    w: SimWorld,
    queries: Sequence[str],
    noise: NoiseModel,
    rng: np.random.Generator,
    cache: RenderCache | None = None,
) -> Observation:
    """Simulated segmentation + depth for a set of phrase queries.

    Each query yields one candidate mask per visible matching object, plus
    an occasional spurious patch.  Depth is rendered only under masks; all
    other pixels read 0 (invalid).
    """
    if not queries:
        raise ValueError("at least one query is required")
    cam = w.head_camera()
    if cache is None:
        cache = RenderCache()
    cache.reset(w.scene_version)
    depth = np.zeros((cam.height, cam.width))
    noisy = noise.depth_sigma > 0 or noise.pixel_dropout > 0
    out: dict[str, tuple[CandidateMask, ...]] = {}
    for q in dict.fromkeys(queries):
        cands: list[CandidateMask] = []
        for o, quality in w.matches(q):
            if not o.renderable or noise.occluded(o.id, w.clock):
                continue
            if noise.mask_miss_prob > 0 and rng.random() < noise.mask_miss_prob:
                continue
            rows, cols, t = _render_object(w, cam, o, cache)
            if rows.size < MIN_CANDIDATE_PIXELS:
                continue
            if noisy:
                t = _perturb(t, noise, rng)
            depth[rows, cols] = t
            cands.append(CandidateMask(rows, cols, float(quality), q, o.id))
        if noise.distractor_prob > 0 and rng.random() < noise.distractor_prob:
            d = _distractor(w, cam, q, noise, rng, cache)
            if d is not None:
                mask, t = d
                depth[mask.rows, mask.cols] = t
                cands.append(mask)
        out[q] = tuple(cands)
    return Observation(w.clock, depth, out, cam)


def _perturb(t: np.ndarray, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    t = t.copy()
    if noise.depth_sigma > 0:
        t = np.maximum(t + rng.normal(0.0, noise.depth_sigma, t.shape[0]), 0.01)
    if noise.pixel_dropout > 0:
        t[rng.random(t.shape[0]) < noise.pixel_dropout] = 0.0
    return t


def _distractor(w: SimWorld, cam: CameraModel, query: str, noise: NoiseModel, rng, cache: RenderCache):
    """A spurious patch on some visible surface, confidently mislabelled."""
    hosts = [o for o in w.objects if o.renderable and cache.rects.get(o.id) is not None]
    if not hosts:
        return None
    host = hosts[int(rng.integers(len(hosts)))]
    r0, r1, c0, c1 = cache.rects[host.id]
    size = int(rng.integers(5, 9))
    rs = int(rng.integers(r0, max(r0, r1 - size) + 1))
    cs = int(rng.integers(c0, max(c0, c1 - size) + 1))
    rr, cc = np.mgrid[rs : min(rs + size, cam.height), cs : min(cs + size, cam.width)]
    rows, cols = rr.ravel(), cc.ravel()
    t = _first_hit(w, cam, rows, cols)
    keep = np.isfinite(t)
    rows, cols, t = rows[keep], cols[keep], t[keep]
    if rows.size < MIN_CANDIDATE_PIXELS:
        return None
    t = _perturb(t, noise, rng)
    conf = float(rng.uniform(0.3, 0.8))
    return CandidateMask(rows, cols, conf, query, None), t

