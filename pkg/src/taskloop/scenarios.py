"""Scenario registry: desk-scale layouts, per-seed spawning, calibrated noise
and ground-truth success oracles."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping

import numpy as np

from .geometry import footprint_contains
from .sim import FLOOR_ID, CameraModel, NoiseModel, RobotState, SimObject, SimWorld

__all__ = [
    "SCENARIO_NAMES",
    "ScenarioSpec",
    "UnknownScenario",
    "VocabularyEntry",
    "calibrated_noise",
    "check_oracle",
    "load_scenario",
    "spawn_scenario",
]

SCENARIO_NAMES = (
    "fetch_bottle",
    "deliver_basket",
    "grasp_bottle",
    "place_basket",
    "place_coffee",
    "tidy_desk",
    "tabletop_sorting",
    "bring_me_a_drink",
)


class UnknownScenario(KeyError):
    pass


@dataclass(frozen=True)
class VocabularyEntry:
    """A phrase the perception survey looks for, with what the planner should
    assume about matches."""

    phrase: str
    category: str
    role: str  # clutter | container | support | person | item
    accepts: str | None = None  # containers: category they collect


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    instruction: str
    camera: Mapping[str, float]
    robot_base: tuple[float, float, float]
    objects: tuple[Mapping[str, Any], ...]
    phrase_table: Mapping[str, tuple[tuple[str, float], ...]]
    vocabulary: tuple[VocabularyEntry, ...]
    noise: Mapping[str, Any]
    oracle: Mapping[str, Any]
    max_sim_time: float = 120.0
    burst_window: tuple[int, int] = (5, 200)
    burst_entities: tuple[str, ...] = ()
    stance_faults: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScenarioSpec":
        return cls(
            name=d["name"],
            instruction=d["instruction"],
            camera=dict(d["camera"]),
            robot_base=tuple(d.get("robot_base", (0.0, 0.0, 0.0))),
            objects=tuple(d["objects"]),
            phrase_table={k: tuple((i, float(q)) for i, q in v) for k, v in d["phrase_table"].items()},
            vocabulary=tuple(VocabularyEntry(**v) for v in d["vocabulary"]),
            noise=dict(d.get("noise", {})),
            oracle=dict(d["oracle"]),
            max_sim_time=float(d.get("max_sim_time", 120.0)),
            burst_window=tuple(d.get("burst_window", (5, 200))),
            burst_entities=tuple(d.get("burst_entities", ())),
            stance_faults=tuple(tuple(f) for f in d.get("stance_faults", ())),
        )


def load_scenario(name: str) -> ScenarioSpec:
    if name not in SCENARIO_NAMES:
        raise UnknownScenario(name)
    text = resources.files("taskloop").joinpath("scenarios", f"{name}.json").read_text(encoding="utf-8")
    return ScenarioSpec.from_dict(json.loads(text))


def _seed_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, stream]))


def spawn_scenario(spec: ScenarioSpec | str, seed: int) -> SimWorld:
    """Deterministic world for ``(spec, seed)``.

    Objects with a ``jitter`` entry are displaced uniformly within it; draws
    that would overlap another object's footprint are rejected.
    """
    if isinstance(spec, str):
        spec = load_scenario(spec)
    rng = _seed_rng(seed, 0)
    floor = SimObject(FLOOR_ID, "floor", (0.0, 0.0, -0.05), 0.0, (20.0, 20.0, 0.05), renderable=False)
    placed: dict[str, SimObject] = {FLOOR_ID: floor}
    for od in spec.objects:
        support = placed[od.get("on", FLOOR_ID)]
        ext = tuple(float(e) for e in od["extent"])
        base_xy = np.asarray(od["xy"], dtype=float)
        base_yaw = float(od.get("yaw", 0.0))
        jitter = od.get("jitter")
        for _ in range(200):
            xy, yaw = base_xy, base_yaw
            if jitter:
                xy = base_xy + rng.uniform(-1.0, 1.0, 2) * np.asarray(jitter[:2])
                yaw = base_yaw + (rng.uniform(-1.0, 1.0) * jitter[2] if len(jitter) > 2 else 0.0)
            if not jitter or not _overlaps(xy, yaw, ext, support, placed.values()):
                break
        else:
            xy, yaw = base_xy, base_yaw
        zone = od.get("handover_zone")
        placed[od["id"]] = SimObject(
            id=od["id"],
            category=od["category"],
            position=(float(xy[0]), float(xy[1]), support.top + ext[2]),
            yaw=float(yaw),
            extent=ext,
            is_container=bool(od.get("container", False)),
            graspable=bool(od.get("graspable", False)),
            support_of=support.id,
            handover_zone=tuple(zone) if zone else None,
        )
    cam = spec.camera
    camera = CameraModel(cam["fx"], cam["fy"], cam["cx"], cam["cy"], int(cam["width"]), int(cam["height"]))
    return SimWorld(
        objects=tuple(placed.values()),
        robot=RobotState(base=tuple(float(v) for v in spec.robot_base)),
        camera=camera,
        clock=0,
        rng_stream=int(seed),
        phrase_table=spec.phrase_table,
        stance_faults=spec.stance_faults,
    )


def _overlaps(xy, yaw, ext, support: SimObject, others) -> bool:
    # keep clear of everything resting on the same support, and on the support itself
    if support.id != FLOOR_ID and not footprint_contains(support.position, support.yaw, support.extent, xy[0], xy[1], -0.05):
        return True
    r = math.hypot(ext[0], ext[1])
    for o in others:
        if o.support_of != support.id:
            continue
        if math.hypot(o.position[0] - xy[0], o.position[1] - xy[1]) < r + math.hypot(o.extent[0], o.extent[1]) + 0.03:
            return True
    return False


def calibrated_noise(spec: ScenarioSpec, seed: int, profile: Mapping[str, Any] | None = None) -> NoiseModel:
    """The scenario's noise defaults plus randomly timed occlusion bursts.

    ``profile["bursts"]`` bursts of ``profile["burst_ticks"]`` ticks each are
    placed on the scenario's burst-eligible entities, uniformly inside the
    burst window.
    """
    p = dict(spec.noise)
    if profile:
        p.update(profile)
    n_bursts = int(p.pop("bursts", 0))
    length = int(p.pop("burst_ticks", 10))
    explicit = [tuple(b) for b in p.pop("occlusion_bursts", ())]
    rng = _seed_rng(seed, 1)
    bursts = list(explicit)
    if spec.burst_entities:
        lo, hi = spec.burst_window
        for _ in range(n_bursts):
            e = spec.burst_entities[int(rng.integers(len(spec.burst_entities)))]
            bursts.append((e, int(rng.integers(lo, hi)), length))
    p["occlusion_bursts"] = bursts
    return NoiseModel.from_dict(p)


def check_oracle(spec: ScenarioSpec, w: SimWorld) -> bool:
    """Ground-truth end-state check; reads only the simulator."""
    o = spec.oracle
    kind = o["kind"]
    if kind == "all_in_containers":
        held = w.robot.holding()
        for oid in o["objects"]:
            sup = w.obj(oid).support_of
            if oid == held or sup is None or not w.obj(sup).is_container:
                return False
        return True
    if kind == "sorted":
        held = w.robot.holding()
        return all(oid != held and w.obj(oid).support_of == c for oid, c in o["map"].items())
    if kind == "supported_by":
        return w.robot.holding() != o["object"] and w.obj(o["object"]).support_of == o["support"]
    if kind == "held":
        return w.robot.holding() == o["object"]
    raise ValueError(f"unknown oracle kind {kind!r}")
