"""Task-program producers: a deterministic rule planner for the benchmark
instructions and an HTTP adapter for an external model with schema
validation and a bounded repair loop."""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import httpx

from .grounding import WorkspaceState
from .program import (
    COMPARATORS,
    DEFAULT_WORKSPACE_REFS,
    PREDICATES,
    RECOVERY_OPERATORS,
    ROBOT_REF,
    Action,
    Arm,
    DestinationSpec,
    EntitySpec,
    LocomotionSpec,
    ManipulationSpec,
    PredicateAssertion,
    Primitive,
    ProgramSyntaxError,
    SchemaError,
    Subtask,
    SubtaskType,
    TaskProgram,
    canonical_json,
    parse_program,
    program_from_dict,
    program_to_dict,
    validate_program,
)
from .replanner import FeedbackRecord, PlannerError, rule_replan

__all__ = [
    "EXTERNAL",
    "ExternalPlanner",
    "PROGRAM_SCHEMA",
    "PlannerConfig",
    "RULE_BASED",
    "RulePlanner",
    "SceneEntry",
    "SceneSummary",
    "location_tag",
    "make_planner",
    "plan",
    "plan_external",
    "summarize_workspace",
]

RULE_BASED = "RULE_BASED"
EXTERNAL = "EXTERNAL"
WIRE_VERSION = 1

PRE_FRAMES = 3
SUCCESS_FRAMES = 10
TIMEOUT = 30
MAX_RETRY = 2
STANDOFF = 0.55
HANDOVER_STANDOFF = 0.8
WALK_MARGIN = 0.3  # keeps the stopping point clear of the +-10% hysteresis band


# --------------------------------------------------------------------------
# Scene summary


@dataclass(frozen=True)
class SceneEntry:
    ref: str
    category: str
    phrase: str
    location: str  # coarse tag relative to the robot, e.g. "front-right near"
    role: str = "item"  # clutter | container | support | person | item
    accepts: str | None = None

    def to_dict(self) -> dict:
        d = {"ref": self.ref, "category": self.category, "phrase": self.phrase, "location": self.location, "role": self.role}
        if self.accepts is not None:
            d["accepts"] = self.accepts
        return d


@dataclass(frozen=True)
class SceneSummary:
    entries: tuple[SceneEntry, ...] = ()
    robot: str = "standing, hands free"
    constraints: tuple[str, ...] = ()
    version: int = WIRE_VERSION

    def refs(self) -> tuple[str, ...]:
        return tuple(e.ref for e in self.entries)

    def get(self, ref: str) -> SceneEntry | None:
        return next((e for e in self.entries if e.ref == ref), None)

    def by_role(self, role: str) -> tuple[SceneEntry, ...]:
        return tuple(e for e in self.entries if e.role == role)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "entities": [e.to_dict() for e in self.entries],
            "robot": self.robot,
            "constraints": list(self.constraints),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SceneSummary":
        entries = tuple(
            SceneEntry(e["ref"], e["category"], e["phrase"], e.get("location", ""), e.get("role", "item"), e.get("accepts"))
            for e in d.get("entities", ())
        )
        return cls(entries, d.get("robot", ""), tuple(d.get("constraints", ())), int(d.get("version", WIRE_VERSION)))


def location_tag(base: Sequence[float], xy: Sequence[float]) -> str:
    """Bearing sector and distance band of a point in the robot frame."""
    dx, dy = xy[0] - base[0], xy[1] - base[1]
    bearing = math.degrees(math.atan2(dy, dx) - base[2])
    bearing = (bearing + 180.0) % 360.0 - 180.0
    if abs(bearing) <= 15:
        sector = "front"
    elif abs(bearing) <= 75:
        sector = "front-left" if bearing > 0 else "front-right"
    elif abs(bearing) <= 120:
        sector = "left" if bearing > 0 else "right"
    else:
        sector = "behind"
    band = "near" if math.hypot(dx, dy) <= 1.0 else "far"
    return f"{sector} {band}"


@dataclass(frozen=True)
class EntityLabel:
    phrase: str
    category: str
    role: str
    accepts: str | None = None


def summarize_workspace(ws: WorkspaceState, labels: Mapping[str, EntityLabel]) -> SceneSummary:
    """Summary of every labelled, tracked entity in ``ws``."""
    entries = []
    for ref in sorted(labels):
        t = ws.tracks.get(ref)
        if t is None:
            continue
        lab = labels[ref]
        entries.append(SceneEntry(ref, lab.category, lab.phrase, location_tag(ws.robot.base, t.center[:2]), lab.role, lab.accepts))
    held = ws.robot.held
    robot = "standing, hands free" if held is None else f"standing, holding {held[1]} ({held[0]})"
    constraints = () if ws.robot.stance_ok else ("stance unstable",)
    return SceneSummary(tuple(entries), robot, constraints)


# --------------------------------------------------------------------------
# Rule planner


def _pred(key: str, args: Mapping[str, Any], op: str, value: Any, n: int) -> PredicateAssertion:
    return PredicateAssertion(key, tuple(args.items()), op, value, n)


def _balance() -> PredicateAssertion:
    return _pred("BALANCE_OK", {}, "==", True, 1)


def _entity(e: SceneEntry) -> EntitySpec:
    return EntitySpec(e.ref, e.phrase, e.category)


def _manip(sid: int, name: str, obj: SceneEntry, action: Action, dest: SceneEntry | None, success) -> Subtask:
    arm = Arm.RIGHT
    pre = (_pred("VISIBLE", {"object": obj.ref}, "==", True, PRE_FRAMES),)
    if action is not Action.HANDOVER:
        pre += (_pred("REACHABLE", {"object": obj.ref, "arm": arm.value}, "==", True, PRE_FRAMES),)
    else:
        pre += (_pred("VISIBLE", {"object": dest.ref}, "==", True, PRE_FRAMES),)
    return Subtask(
        subtask_id=sid,
        type=SubtaskType.MANIPULATION,
        name=name,
        target=_entity(obj),
        destination=DestinationSpec(dest.phrase, dest.ref) if dest is not None else DestinationSpec(),
        manipulation=ManipulationSpec(arm, action, True),
        preconditions=pre + (_balance(),),
        success_conditions=tuple(success),
        timeout_sec=TIMEOUT,
        max_retry=MAX_RETRY,
    )


def _place(sid: int, obj: SceneEntry, dest: SceneEntry) -> Subtask:
    success = (
        _pred("SUPPORTED_BY", {"object": obj.ref, "support": dest.ref}, "==", True, SUCCESS_FRAMES),
        _pred("GRASPED", {"object": obj.ref, "arm": Arm.RIGHT.value}, "==", False, SUCCESS_FRAMES),
    )
    return _manip(sid, f"subtask_{sid}", obj, Action.PLACE, dest, success)


def _grasp(sid: int, obj: SceneEntry) -> Subtask:
    success = (_pred("GRASPED", {"object": obj.ref, "arm": Arm.RIGHT.value}, "==", True, SUCCESS_FRAMES),)
    return _manip(sid, f"subtask_{sid}", obj, Action.GRASP, None, success)


def _handover(sid: int, obj: SceneEntry, person: SceneEntry) -> Subtask:
    success = (
        _pred("GRASPED", {"object": obj.ref, "arm": Arm.RIGHT.value}, "==", False, SUCCESS_FRAMES),
        _pred("NEAR", {"subject": obj.ref, "reference": person.ref}, "<=", 0.5, SUCCESS_FRAMES),
    )
    return _manip(sid, f"subtask_{sid}", obj, Action.HANDOVER, person, success)


def _walk(sid: int, goal: SceneEntry, primitive: Primitive, standoff: float) -> Subtask:
    return Subtask(
        subtask_id=sid,
        type=SubtaskType.LOCOMOTION,
        name=f"subtask_{sid}",
        target=_entity(goal),
        locomotion=LocomotionSpec(primitive, goal_ref=goal.ref, standoff=standoff),
        preconditions=(_balance(),),
        success_conditions=(_pred("NEAR", {"subject": ROBOT_REF, "reference": goal.ref}, "<=", round(standoff + WALK_MARGIN, 6), SUCCESS_FRAMES),),
        timeout_sec=TIMEOUT,
        max_retry=MAX_RETRY,
    )


def _locate(sid: int, goal: SceneEntry) -> Subtask:
    return Subtask(
        subtask_id=sid,
        type=SubtaskType.LOCOMOTION,
        name=f"subtask_{sid}",
        target=_entity(goal),
        locomotion=LocomotionSpec(Primitive.TURN_LEFT, goal_ref=goal.ref, standoff=STANDOFF),
        preconditions=(_balance(),),
        success_conditions=(_pred("VISIBLE", {"object": goal.ref}, "==", True, SUCCESS_FRAMES),),
        timeout_sec=TIMEOUT,
        max_retry=MAX_RETRY,
    )


class _Builder:
    """Accumulates subtasks with consecutive ids and synthesizes entries for
    entities the scene does not contain yet."""

    def __init__(self, scene: SceneSummary):
        self.scene = scene
        self.subtasks: list[Subtask] = []
        self.synth: dict[str, SceneEntry] = {}

    @property
    def next_id(self) -> int:
        return len(self.subtasks) + 1

    def add(self, make, *args) -> None:
        self.subtasks.append(make(self.next_id, *args))

    def seen(self, ref: str) -> bool:
        return self.scene.get(ref) is not None

    def find(self, word: str, roles: Sequence[str] = ()) -> SceneEntry | None:
        for e in self.scene.entries:
            if roles and e.role not in roles:
                continue
            if e.phrase == word or e.category == word:
                return e
        for e in self.scene.entries:
            if (not roles or e.role in roles) and (word in e.phrase or e.phrase in word):
                return e
        return self.synth.get(word)

    def synthesize(self, word: str, role: str) -> SceneEntry:
        if word in self.synth:
            return self.synth[word]
        prefix = {"person": "person", "support": "table", "container": "container"}.get(role, "obj")
        taken = set(self.scene.refs()) | {e.ref for e in self.synth.values()}
        k = 1
        while f"{prefix}_{k}" in taken:
            k += 1
        e = SceneEntry(f"{prefix}_{k}", word, word, "unknown", role)
        self.synth[word] = e
        return e

    def entity(self, word: str, role: str, roles: Sequence[str] = ()) -> SceneEntry:
        return self.find(word, roles) or self.synthesize(word, role)

    def ensure_visible(self, e: SceneEntry) -> None:
        if not self.seen(e.ref):
            self.add(_locate, e)


def _words(text: str) -> str:
    return re.sub(r"[^a-z ]+", " ", text.lower()).strip()


def _tidy(b: _Builder, text: str) -> None:
    containers = b.scene.by_role("container")
    if not containers:
        containers = (b.synthesize("container", "container"),)
    for obj in b.scene.by_role("clutter"):
        dest = next((c for c in containers if c.accepts in (None, obj.category)), containers[0])
        b.add(_place, obj, dest)
    if not b.subtasks:
        raise PlannerError("nothing to tidy in the scene")


def _sort(b: _Builder, text: str) -> None:
    containers = b.scene.by_role("container")
    for obj in b.scene.by_role("clutter"):
        dest = next((c for c in containers if c.accepts == obj.category), None)
        if dest is None:
            raise PlannerError(f"no container accepts category {obj.category!r}")
        b.add(_place, obj, dest)
    if not b.subtasks:
        raise PlannerError("nothing to sort in the scene")


def _drink(b: _Builder, text: str) -> None:
    person = b.entity("person", "person", ("person",))
    drink = b.entity("drink", "item", ("item", "clutter"))
    b.add(_locate, person)
    b.ensure_visible(drink)
    b.add(_walk, drink, Primitive.FORWARD_WALK, STANDOFF)
    b.add(_grasp, drink)
    b.add(_walk, person, Primitive.CARRY_AND_WALK, HANDOVER_STANDOFF)
    b.add(_handover, drink, person)


def _fetch(b: _Builder, m: re.Match) -> None:
    obj = b.entity(m.group("obj"), "item", ("item", "clutter"))
    b.ensure_visible(obj)
    b.add(_walk, obj, Primitive.FORWARD_WALK, STANDOFF)
    b.add(_grasp, obj)


def _grasp_only(b: _Builder, m: re.Match) -> None:
    obj = b.entity(m.group("obj"), "item", ("item", "clutter"))
    b.ensure_visible(obj)
    b.add(_grasp, obj)


def _deliver(b: _Builder, m: re.Match) -> None:
    obj = b.entity(m.group("obj"), "item", ("item", "clutter"))
    dest = b.entity(m.group("dest"), "support", ("support", "container"))
    b.ensure_visible(obj)
    b.add(_grasp, obj)
    b.ensure_visible(dest)
    b.add(_walk, dest, Primitive.CARRY_AND_WALK, STANDOFF)
    b.add(_place, obj, dest)


def _place_on(b: _Builder, m: re.Match) -> None:
    obj = b.entity(m.group("obj"), "item", ("item", "clutter"))
    dest = b.entity(m.group("dest"), "container", ("container", "support"))
    b.ensure_visible(obj)
    b.ensure_visible(dest)
    b.add(_place, obj, dest)


_ART = r"(?:the |a |an |my |some )?"
_TEMPLATES: tuple[tuple[re.Pattern, Any], ...] = (
    (re.compile(r"\b(?:tidy|clean)\b"), lambda b, m, t: _tidy(b, t)),
    (re.compile(r"\bsort\b"), lambda b, m, t: _sort(b, t)),
    (re.compile(r"\bbring\b.*\bdrink\b"), lambda b, m, t: _drink(b, t)),
    (re.compile(rf"\bdeliver {_ART}(?P<obj>[a-z ]+?) to {_ART}(?P<dest>[a-z ]+)$"), lambda b, m, t: _deliver(b, m)),
    (re.compile(rf"\b(?:place|put) {_ART}(?P<obj>[a-z ]+?) (?:on|onto|in|into) {_ART}(?P<dest>[a-z ]+)$"), lambda b, m, t: _place_on(b, m)),
    (re.compile(rf"\bfetch {_ART}(?P<obj>[a-z ]+)$"), lambda b, m, t: _fetch(b, m)),
    (re.compile(rf"\b(?:grasp|grab|pick up) {_ART}(?P<obj>[a-z ]+)$"), lambda b, m, t: _grasp_only(b, m)),
)


def _task_id(instruction: str, scene: SceneSummary) -> str:
    h = hashlib.sha1((instruction + "\n" + canonical_json(scene.to_dict())).encode("utf-8"))
    return h.hexdigest()[:8]


def workspace_refs(scene: SceneSummary) -> frozenset[str]:
    return frozenset(DEFAULT_WORKSPACE_REFS | set(scene.refs()))


class RulePlanner:
    """Template expansion over the scene summary.  Deterministic: the same
    instruction and summary always give the same program bytes."""

    def __init__(self) -> None:
        self.rounds = 0

    def plan(self, instruction: str, scene: SceneSummary) -> TaskProgram:
        if not instruction or not instruction.strip():
            raise PlannerError("empty instruction")
        text = _words(instruction)
        b = _Builder(scene)
        for pattern, expand in _TEMPLATES:
            m = pattern.search(text)
            if m:
                expand(b, m, text)
                break
        else:
            raise PlannerError(f"no template matches {instruction!r}")
        program = TaskProgram(_task_id(instruction, scene), instruction, tuple(b.subtasks))
        report = validate_program(program, workspace_refs(scene))
        if not report.ok:
            raise PlannerError(report.summary())
        return program

    def replan(self, program: TaskProgram, feedback: FeedbackRecord, completed: Sequence[int]) -> TaskProgram:
        self.rounds += 1
        return rule_replan(program, feedback, completed, self.rounds)


# --------------------------------------------------------------------------
# External planner


def _predicate_schema() -> dict:
    return {
        "type": "object",
        "required": ["key", "args", "op", "value", "stable_frames"],
        "additionalProperties": False,
        "properties": {
            "key": {"enum": sorted(PREDICATES)},
            "args": {"type": "object", "additionalProperties": {"type": ["string", "number", "boolean"]}},
            "op": {"enum": list(COMPARATORS)},
            "value": {"type": ["boolean", "number"]},
            "stable_frames": {"type": "integer", "minimum": 1},
        },
    }


PROGRAM_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "TaskProgram",
    "type": "object",
    "required": ["task_id", "command", "subtasks"],
    "additionalProperties": False,
    "properties": {
        "task_id": {"type": "string"},
        "command": {"type": "string"},
        "subtasks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": [
                    "subtask_id",
                    "type",
                    "name",
                    "target",
                    "destination",
                    "manipulation",
                    "locomotion",
                    "preconditions",
                    "success_conditions",
                    "failure_handlers",
                    "timeout_sec",
                    "max_retry",
                ],
                "properties": {
                    "subtask_id": {"type": "integer", "minimum": 1},
                    "type": {"enum": [t.value for t in SubtaskType]},
                    "name": {"type": "string"},
                    "target": {
                        "type": "object",
                        "required": ["ref", "phrase"],
                        "additionalProperties": False,
                        "properties": {
                            "ref": {"type": "string", "minLength": 1},
                            "phrase": {"type": "string", "minLength": 1},
                            "category": {"type": "string"},
                            "attributes": {"type": "array", "items": {"type": "string"}},
                            "relations": {
                                "type": "array",
                                "items": {
                                    "type": "object",
                                    "required": ["relation", "ref"],
                                    "additionalProperties": False,
                                    "properties": {"relation": {"type": "string", "minLength": 1}, "ref": {"type": "string", "minLength": 1}},
                                },
                            },
                        },
                    },
                    "destination": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {"ref": {"type": "string", "minLength": 1}, "phrase": {"type": "string"}},
                    },
                    "manipulation": {
                        "anyOf": [
                            {"type": "object", "maxProperties": 0},
                            {
                                "type": "object",
                                "required": ["arm", "action", "use_upper_body_mpc"],
                                "additionalProperties": False,
                                "properties": {
                                    "arm": {"enum": [a.value for a in Arm]},
                                    "action": {"enum": [a.value for a in Action]},
                                    "use_upper_body_mpc": {"type": "boolean"},
                                },
                            },
                        ]
                    },
                    "locomotion": {
                        "anyOf": [
                            {"type": "object", "maxProperties": 0},
                            {
                                "type": "object",
                                "required": ["primitive", "goal"],
                                "additionalProperties": False,
                                "properties": {
                                    "primitive": {"enum": [p.value for p in Primitive]},
                                    "goal": {
                                        "anyOf": [
                                            {
                                                "type": "object",
                                                "required": ["ref", "standoff"],
                                                "additionalProperties": False,
                                                "properties": {"ref": {"type": "string", "minLength": 1}, "standoff": {"type": "number", "minimum": 0}},
                                            },
                                            {
                                                "type": "object",
                                                "required": ["pose"],
                                                "additionalProperties": False,
                                                "properties": {"pose": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}},
                                            },
                                        ]
                                    },
                                },
                            },
                        ]
                    },
                    "preconditions": {"type": "array", "items": _predicate_schema()},
                    "success_conditions": {"type": "array", "items": _predicate_schema()},
                    "failure_handlers": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["on", "do"],
                            "additionalProperties": False,
                            "properties": {
                                "on": {"type": "string"},
                                "do": {"enum": list(RECOVERY_OPERATORS)},
                                "params": {"type": "object"},
                            },
                        },
                    },
                    "timeout_sec": {"type": "number", "exclusiveMinimum": 0},
                    "max_retry": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = RULE_BASED
    endpoint: str | None = None
    deadline: float = 30.0
    max_repairs: int = 2

    def __post_init__(self):
        if self.kind not in (RULE_BASED, EXTERNAL):
            raise ValueError(f"unknown planner kind {self.kind!r}")
        if self.kind == EXTERNAL and not self.endpoint:
            raise ValueError("external planner needs an endpoint")
        if self.max_repairs < 0:
            raise ValueError("max_repairs must be >= 0")
        if self.deadline <= 0:
            raise ValueError("deadline must be positive")

    @classmethod
    def from_env(cls, kind: str = RULE_BASED, **kw) -> "PlannerConfig":
        if kind == EXTERNAL and "endpoint" not in kw:
            kw["endpoint"] = os.environ.get("PLANNER_URL")
        return cls(kind=kind, **kw)


@dataclass
class RequestRecord:
    attempt: int
    issues: tuple[str, ...]
    accepted: bool


def _response_program(body: Any) -> Any:
    # Either the program document itself or {"program": document}.
    if isinstance(body, dict) and "program" in body and "subtasks" not in body:
        return body["program"]
    return body


class ExternalPlanner:
    """Client for an instruction-following model behind an HTTP endpoint.

    Each request carries the instruction, scene summary, program schema and,
    on replanning, the feedback record and current program.  Invalid
    responses are answered with a repair request listing the issues, at most
    ``max_repairs`` times.
    """

    def __init__(self, cfg: PlannerConfig, client: httpx.Client | None = None):
        if cfg.kind != EXTERNAL:
            raise ValueError("ExternalPlanner needs an EXTERNAL config")
        self.cfg = cfg
        self.client = client if client is not None else httpx.Client()
        self.log: list[RequestRecord] = []
        self.scene = SceneSummary()
        self.instruction = ""

    @property
    def request_count(self) -> int:
        return len(self.log)

    def plan(self, instruction: str, scene: SceneSummary) -> TaskProgram:
        if not instruction or not instruction.strip():
            raise PlannerError("empty instruction")
        self.scene, self.instruction = scene, instruction
        return self._exchange({"instruction": instruction, "scene": scene.to_dict()})

    def replan(self, program: TaskProgram, feedback: FeedbackRecord, completed: Sequence[int]) -> TaskProgram:
        body = {
            "instruction": program.command,
            "scene": self.scene.to_dict(),
            "feedback": feedback.to_dict(),
            "current_program": program_to_dict(program),
            "completed": list(completed),
        }
        return self._exchange(body)

    def _exchange(self, base: Mapping[str, Any]) -> TaskProgram:
        issues: tuple[str, ...] = ()
        for attempt in range(self.cfg.max_repairs + 1):
            body = {"version": WIRE_VERSION, **base, "schema": PROGRAM_SCHEMA}
            if issues:
                body["issues"] = list(issues)
            try:
                r = self.client.post(self.cfg.endpoint, json=body, timeout=self.cfg.deadline)
            except httpx.TimeoutException as exc:
                self.log.append(RequestRecord(attempt, ("deadline exceeded",), False))
                raise PlannerError(f"planner deadline exceeded after {self.cfg.deadline} s") from exc
            except httpx.HTTPError as exc:
                self.log.append(RequestRecord(attempt, (str(exc),), False))
                raise PlannerError(f"planner request failed: {exc}") from exc
            program, issues = self._accept(r)
            self.log.append(RequestRecord(attempt, issues, program is not None))
            if program is not None:
                return program
        raise PlannerError(f"no valid program after {self.cfg.max_repairs + 1} requests: {'; '.join(issues)}")

    def _accept(self, r: httpx.Response) -> tuple[TaskProgram | None, tuple[str, ...]]:
        if r.status_code != 200:
            return None, (f"http status {r.status_code}",)
        try:
            doc = _response_program(json.loads(r.text))
            program = program_from_dict(doc) if not isinstance(doc, str) else parse_program(doc)
        except (json.JSONDecodeError, ProgramSyntaxError) as exc:
            return None, (f"malformed JSON: {exc}",)
        except SchemaError as exc:
            return None, (str(exc),)
        report = validate_program(program, workspace_refs(self.scene))
        if not report.ok:
            return None, tuple(f"{i.path}: {i.message}" for i in report.errors)
        return program, ()


def make_planner(cfg: PlannerConfig, client: httpx.Client | None = None) -> RulePlanner | ExternalPlanner:
    return RulePlanner() if cfg.kind == RULE_BASED else ExternalPlanner(cfg, client)


def plan(instruction: str, scene: SceneSummary, cfg: PlannerConfig = PlannerConfig(), client: httpx.Client | None = None) -> TaskProgram:
    return make_planner(cfg, client).plan(instruction, scene)


def plan_external(
    cfg: PlannerConfig,
    instruction: str,
    scene: SceneSummary,
    feedback: FeedbackRecord | None = None,
    program: TaskProgram | None = None,
    completed: Sequence[int] = (),
    client: httpx.Client | None = None,
) -> TaskProgram:
    if cfg.kind != EXTERNAL:
        raise ValueError("plan_external needs an EXTERNAL config")
    p = ExternalPlanner(cfg, client)
    if feedback is None:
        return p.plan(instruction, scene)
    if program is None:
        raise ValueError("replanning needs the current program")
    p.scene, p.instruction = scene, instruction
    return p.replan(program, feedback, completed)
