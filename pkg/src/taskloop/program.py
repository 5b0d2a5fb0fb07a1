"""Typed task programs: parsing, validation, canonical serialization and
entity collection.

A program is a JSON document of the form::

    {"task_id": ..., "command": ..., "subtasks": [ {...}, ... ]}

Field names and their order are fixed; :func:`serialize_program` emits them
in that order with no insignificant whitespace so that documents are
byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

__all__ = [
    "Action",
    "Arm",
    "COMPARATORS",
    "DEFAULT_WORKSPACE_REFS",
    "DestinationSpec",
    "EntityEntry",
    "EntitySet",
    "EntitySpec",
    "Issue",
    "LocomotionSpec",
    "ManipulationSpec",
    "PREDICATES",
    "PredicateAssertion",
    "PredicateSignature",
    "Primitive",
    "ProgramSyntaxError",
    "RECOVERY_OPERATORS",
    "ROBOT_REF",
    "RecoveryDirective",
    "SchemaError",
    "Subtask",
    "SubtaskType",
    "TaskProgram",
    "ValidationReport",
    "collect_entities",
    "destination_ref",
    "parse_program",
    "program_from_dict",
    "program_to_dict",
    "serialize_program",
    "validate_program",
]


class SubtaskType(str, Enum):
    MANIPULATION = "MANIPULATION"
    LOCOMOTION = "LOCOMOTION"


class Arm(str, Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"


class Action(str, Enum):
    REACH = "REACH"
    GRASP = "GRASP"
    PLACE = "PLACE"
    HANDOVER = "HANDOVER"
    RELEASE = "RELEASE"


class Primitive(str, Enum):
    FORWARD_WALK = "FORWARD_WALK"
    BACKWARD_WALK = "BACKWARD_WALK"
    CARRY_AND_WALK = "CARRY_AND_WALK"
    RUN = "RUN"
    SIDE_WALK = "SIDE_WALK"
    TURN_LEFT = "TURN_LEFT"
    TURN_RIGHT = "TURN_RIGHT"


COMPARATORS = ("==", "!=", "<", "<=", ">", ">=")

RECOVERY_OPERATORS = ("RE_OBSERVE", "RE_GROUND", "ADAPT_PARAMS", "TASK_REVISION")

# The robot is addressable in predicates without being perceived.
ROBOT_REF = "robot"

# Identifiers every workspace registers before any plan runs: the robot and
# the primary work surface.
DEFAULT_WORKSPACE_REFS = frozenset({ROBOT_REF, "table_1"})


@dataclass(frozen=True)
class PredicateSignature:
    roles: tuple[str, ...]
    boolean: bool
    invariant: bool = False
    optional_roles: tuple[str, ...] = ()

    def ref_roles(self) -> tuple[str, ...]:
        return tuple(r for r in self.roles + self.optional_roles if r != "arm")


PREDICATES: dict[str, PredicateSignature] = {
    "VISIBLE": PredicateSignature(("object",), True),
    "SUPPORTED_BY": PredicateSignature(("object", "support"), True),
    "INSIDE": PredicateSignature(("object", "container"), True),
    "GRASPED": PredicateSignature(("object", "arm"), True),
    "NEAR": PredicateSignature(("subject", "reference"), False),
    "EE_DISTANCE": PredicateSignature(("arm", "object"), False),
    "ALIGNED": PredicateSignature(("object", "reference"), False),
    "REACHABLE": PredicateSignature(("object", "arm"), True),
    "BALANCE_OK": PredicateSignature((), True, invariant=True, optional_roles=("robot",)),
    "NO_COLLISION": PredicateSignature(("object",), True, invariant=True),
}


class ProgramSyntaxError(ValueError):
    """The document is not well-formed JSON."""


class SchemaError(ValueError):
    """A field is missing, unknown or ill-typed.  ``path`` is a JSON pointer."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path
        self.message = message


# --------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class EntitySpec:
    ref: str
    phrase: str
    category: str = "unknown"
    attributes: tuple[str, ...] = ()
    relations: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class DestinationSpec:
    phrase: str = ""
    ref: str | None = None


@dataclass(frozen=True)
class ManipulationSpec:
    arm: Arm
    action: Action
    use_upper_body_mpc: bool


@dataclass(frozen=True)
class LocomotionSpec:
    primitive: Primitive
    goal_ref: str | None = None
    standoff: float | None = None
    goal_pose: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class PredicateAssertion:
    key: str
    args: tuple[tuple[str, Any], ...]
    op: str
    value: Any
    stable_frames: int

    def arg(self, role: str, default: Any = None) -> Any:
        for k, v in self.args:
            if k == role:
                return v
        return default

    @property
    def args_dict(self) -> dict[str, Any]:
        return dict(self.args)

    def label(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in self.args)
        return f"{self.key}({inner})"

    def refs(self) -> tuple[str, ...]:
        sig = PREDICATES.get(self.key)
        roles = sig.ref_roles() if sig else tuple(k for k, _ in self.args if k != "arm")
        return tuple(v for k, v in self.args if k in roles and isinstance(v, str))


@dataclass(frozen=True)
class RecoveryDirective:
    on: str
    do: str
    params: tuple[tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class Subtask:
    subtask_id: int
    type: SubtaskType
    name: str
    target: EntitySpec
    destination: DestinationSpec = DestinationSpec()
    manipulation: ManipulationSpec | None = None
    locomotion: LocomotionSpec | None = None
    preconditions: tuple[PredicateAssertion, ...] = ()
    success_conditions: tuple[PredicateAssertion, ...] = ()
    failure_handlers: tuple[RecoveryDirective, ...] = ()
    timeout_sec: float = 30
    max_retry: int = 2


@dataclass(frozen=True)
class TaskProgram:
    task_id: str
    command: str
    subtasks: tuple[Subtask, ...]

    def index_of(self, subtask_id: int) -> int:
        for i, s in enumerate(self.subtasks):
            if s.subtask_id == subtask_id:
                return i
        raise KeyError(subtask_id)


def destination_ref(subtask: Subtask) -> str | None:
    """Explicit destination ref, or the synthesized ``dest_<id>`` for
    phrase-only destinations.  ``None`` when there is no destination."""
    if subtask.destination.ref:
        return subtask.destination.ref
    if subtask.destination.phrase:
        return f"dest_{subtask.subtask_id}"
    return None


# --------------------------------------------------------------------------
# Parsing


def _expect_keys(obj: Any, path: str, required: Iterable[str], optional: Iterable[str] = ()) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    required = tuple(required)
    allowed = set(required) | set(optional)
    for k in obj:
        if k not in allowed:
            raise SchemaError(f"{path}/{k}", "unknown field")
    for k in required:
        if k not in obj:
            raise SchemaError(f"{path}/{k}", "missing field")
    return obj


def _str(obj: dict, key: str, path: str, *, nonempty: bool = False) -> str:
    v = obj[key]
    if not isinstance(v, str):
        raise SchemaError(f"{path}/{key}", "expected a string")
    if nonempty and not v:
        raise SchemaError(f"{path}/{key}", "must be non-empty")
    return v


def _int(v: Any, path: str, *, minimum: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(path, "expected an integer")
    if minimum is not None and v < minimum:
        raise SchemaError(path, f"must be >= {minimum}")
    return v


def _number(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(path, "expected a number")
    return v


def _enum(enum_cls, v: Any, path: str):
    try:
        return enum_cls(v)
    except ValueError:
        names = ", ".join(e.value for e in enum_cls)
        raise SchemaError(path, f"expected one of {names}") from None


def _str_list(v: Any, path: str) -> tuple[str, ...]:
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise SchemaError(path, "expected a list of strings")
    return tuple(v)


def _entity(obj: Any, path: str) -> EntitySpec:
    obj = _expect_keys(obj, path, ("ref", "phrase"), ("category", "attributes", "relations"))
    ref = _str(obj, "ref", path, nonempty=True)
    phrase = _str(obj, "phrase", path, nonempty=True)
    category = _str(obj, "category", path) if "category" in obj else "unknown"
    attributes = _str_list(obj.get("attributes", []), f"{path}/attributes")
    raw_rel = obj.get("relations", [])
    if not isinstance(raw_rel, list):
        raise SchemaError(f"{path}/relations", "expected a list")
    relations = []
    for i, r in enumerate(raw_rel):
        rp = f"{path}/relations/{i}"
        r = _expect_keys(r, rp, ("relation", "ref"))
        relations.append((_str(r, "relation", rp, nonempty=True), _str(r, "ref", rp, nonempty=True)))
    return EntitySpec(ref, phrase, category, attributes, tuple(relations))


def _destination(obj: Any, path: str) -> DestinationSpec:
    obj = _expect_keys(obj, path, (), ("ref", "phrase"))
    phrase = _str(obj, "phrase", path) if "phrase" in obj else ""
    ref = _str(obj, "ref", path, nonempty=True) if "ref" in obj else None
    return DestinationSpec(phrase, ref)


def _manipulation(obj: Any, path: str) -> ManipulationSpec | None:
    if isinstance(obj, dict) and not obj:
        return None
    obj = _expect_keys(obj, path, ("arm", "action", "use_upper_body_mpc"))
    mpc = obj["use_upper_body_mpc"]
    if not isinstance(mpc, bool):
        raise SchemaError(f"{path}/use_upper_body_mpc", "expected a boolean")
    return ManipulationSpec(
        _enum(Arm, obj["arm"], f"{path}/arm"),
        _enum(Action, obj["action"], f"{path}/action"),
        mpc,
    )


def _locomotion(obj: Any, path: str) -> LocomotionSpec | None:
    if isinstance(obj, dict) and not obj:
        return None
    obj = _expect_keys(obj, path, ("primitive", "goal"))
    primitive = _enum(Primitive, obj["primitive"], f"{path}/primitive")
    gp = f"{path}/goal"
    goal = obj["goal"]
    if isinstance(goal, dict) and "pose" in goal:
        goal = _expect_keys(goal, gp, ("pose",))
        pose = goal["pose"]
        if not isinstance(pose, list) or len(pose) != 3:
            raise SchemaError(f"{gp}/pose", "expected [x, y, yaw]")
        return LocomotionSpec(primitive, goal_pose=tuple(_number(v, f"{gp}/pose/{i}") for i, v in enumerate(pose)))
    goal = _expect_keys(goal, gp, ("ref", "standoff"))
    standoff = _number(goal["standoff"], f"{gp}/standoff")
    if standoff < 0:
        raise SchemaError(f"{gp}/standoff", "must be >= 0")
    return LocomotionSpec(primitive, goal_ref=_str(goal, "ref", gp, nonempty=True), standoff=standoff)


def _predicate(obj: Any, path: str) -> PredicateAssertion:
    obj = _expect_keys(obj, path, ("key", "args", "op", "value", "stable_frames"))
    key = _str(obj, "key", path, nonempty=True)
    args = obj["args"]
    if not isinstance(args, dict):
        raise SchemaError(f"{path}/args", "expected an object")
    for role, v in args.items():
        if isinstance(v, (dict, list)) or v is None:
            raise SchemaError(f"{path}/args/{role}", "expected a ref or scalar literal")
    op = obj["op"]
    if op not in COMPARATORS:
        raise SchemaError(f"{path}/op", f"expected one of {' '.join(COMPARATORS)}")
    value = obj["value"]
    if not isinstance(value, (bool, int, float)):
        raise SchemaError(f"{path}/value", "expected a boolean or number")
    n = _int(obj["stable_frames"], f"{path}/stable_frames", minimum=1)
    return PredicateAssertion(key, tuple(args.items()), op, value, n)


def _handler(obj: Any, path: str) -> RecoveryDirective:
    obj = _expect_keys(obj, path, ("on", "do"), ("params",))
    params = obj.get("params", {})
    if not isinstance(params, dict):
        raise SchemaError(f"{path}/params", "expected an object")
    return RecoveryDirective(_str(obj, "on", path, nonempty=True), _str(obj, "do", path, nonempty=True), tuple(params.items()))


_SUBTASK_FIELDS = (
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
)


def _list(obj: dict, key: str, path: str) -> list:
    v = obj[key]
    if not isinstance(v, list):
        raise SchemaError(f"{path}/{key}", "expected a list")
    return v


def _subtask(obj: Any, path: str) -> Subtask:
    obj = _expect_keys(obj, path, _SUBTASK_FIELDS)
    timeout = _number(obj["timeout_sec"], f"{path}/timeout_sec")
    if timeout <= 0:
        raise SchemaError(f"{path}/timeout_sec", "must be > 0")
    return Subtask(
        subtask_id=_int(obj["subtask_id"], f"{path}/subtask_id", minimum=1),
        type=_enum(SubtaskType, obj["type"], f"{path}/type"),
        name=_str(obj, "name", path),
        target=_entity(obj["target"], f"{path}/target"),
        destination=_destination(obj["destination"], f"{path}/destination"),
        manipulation=_manipulation(obj["manipulation"], f"{path}/manipulation"),
        locomotion=_locomotion(obj["locomotion"], f"{path}/locomotion"),
        preconditions=tuple(_predicate(p, f"{path}/preconditions/{i}") for i, p in enumerate(_list(obj, "preconditions", path))),
        success_conditions=tuple(
            _predicate(p, f"{path}/success_conditions/{i}") for i, p in enumerate(_list(obj, "success_conditions", path))
        ),
        failure_handlers=tuple(_handler(h, f"{path}/failure_handlers/{i}") for i, h in enumerate(_list(obj, "failure_handlers", path))),
        timeout_sec=timeout,
        max_retry=_int(obj["max_retry"], f"{path}/max_retry", minimum=0),
    )


def program_from_dict(doc: Any) -> TaskProgram:
    doc = _expect_keys(doc, "", ("task_id", "command", "subtasks"))
    subtasks = _list(doc, "subtasks", "")
    if not subtasks:
        raise SchemaError("/subtasks", "must contain at least one subtask")
    return TaskProgram(
        task_id=_str(doc, "task_id", ""),
        command=_str(doc, "command", ""),
        subtasks=tuple(_subtask(s, f"/subtasks/{i}") for i, s in enumerate(subtasks)),
    )


def parse_program(text: str | bytes) -> TaskProgram:
    """Parse a task-program document.

    Raises :class:`ProgramSyntaxError` for malformed JSON and
    :class:`SchemaError` (carrying a JSON-pointer ``path``) for structural
    problems, including unknown fields.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProgramSyntaxError(str(exc)) from exc
    return program_from_dict(doc)


# --------------------------------------------------------------------------
# Serialization


def _entity_dict(e: EntitySpec) -> dict:
    return {
        "ref": e.ref,
        "category": e.category,
        "attributes": list(e.attributes),
        "relations": [{"relation": k, "ref": r} for k, r in e.relations],
        "phrase": e.phrase,
    }


def _predicate_dict(p: PredicateAssertion) -> dict:
    return {"key": p.key, "args": dict(p.args), "op": p.op, "value": p.value, "stable_frames": p.stable_frames}


def _subtask_dict(s: Subtask) -> dict:
    dest: dict[str, Any] = {}
    if s.destination.ref is not None:
        dest["ref"] = s.destination.ref
    if s.destination.phrase or s.destination.ref is None:
        dest["phrase"] = s.destination.phrase
    manip: dict[str, Any] = {}
    if s.manipulation is not None:
        manip = {"arm": s.manipulation.arm.value, "action": s.manipulation.action.value, "use_upper_body_mpc": s.manipulation.use_upper_body_mpc}
    loco: dict[str, Any] = {}
    if s.locomotion is not None:
        if s.locomotion.goal_pose is not None:
            goal: dict[str, Any] = {"pose": list(s.locomotion.goal_pose)}
        else:
            goal = {"ref": s.locomotion.goal_ref, "standoff": s.locomotion.standoff}
        loco = {"primitive": s.locomotion.primitive.value, "goal": goal}
    handlers = []
    for h in s.failure_handlers:
        d: dict[str, Any] = {"on": h.on, "do": h.do}
        if h.params:
            d["params"] = dict(h.params)
        handlers.append(d)
    return {
        "subtask_id": s.subtask_id,
        "type": s.type.value,
        "name": s.name,
        "target": _entity_dict(s.target),
        "destination": dest,
        "manipulation": manip,
        "locomotion": loco,
        "preconditions": [_predicate_dict(p) for p in s.preconditions],
        "success_conditions": [_predicate_dict(p) for p in s.success_conditions],
        "failure_handlers": handlers,
        "timeout_sec": s.timeout_sec,
        "max_retry": s.max_retry,
    }


def program_to_dict(p: TaskProgram) -> dict:
    return {"task_id": p.task_id, "command": p.command, "subtasks": [_subtask_dict(s) for s in p.subtasks]}


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def serialize_program(p: TaskProgram) -> str:
    """Canonical, byte-stable JSON for ``p``."""
    return canonical_json(program_to_dict(p))


def serialize_subtask(s: Subtask) -> str:
    return canonical_json(_subtask_dict(s))


# --------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Issue:
    path: str
    severity: str  # "error" | "warning"
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    @property
    def errors(self) -> tuple[Issue, ...]:
        return tuple(i for i in self.issues if i.severity == "error")

    def summary(self) -> str:
        return "; ".join(f"{i.path}: {i.message}" for i in self.issues)


def _declared(s: Subtask) -> set[str]:
    out = {s.target.ref}
    d = destination_ref(s)
    if d:
        out.add(d)
    return out


def validate_program(p: TaskProgram, workspace_refs: Iterable[str] = DEFAULT_WORKSPACE_REFS) -> ValidationReport:
    """Check ref resolution, enum and type/field coherence, and monotone
    subtask ids.  Never raises; problems are reported as issues."""
    issues: list[Issue] = []

    def err(path: str, msg: str) -> None:
        issues.append(Issue(path, "error", msg))

    if not p.subtasks:
        err("/subtasks", "program has no subtasks")
    known = set(workspace_refs)
    seen_ids: set[int] = set()
    seen_names: set[str] = set()
    prev_id = 0
    for i, s in enumerate(p.subtasks):
        sp = f"/subtasks/{i}"
        if s.subtask_id in seen_ids:
            err(f"{sp}/subtask_id", f"duplicate subtask_id {s.subtask_id}")
        elif s.subtask_id <= prev_id:
            err(f"{sp}/subtask_id", "subtask_id must be strictly increasing")
        seen_ids.add(s.subtask_id)
        prev_id = max(prev_id, s.subtask_id)
        if s.name in seen_names:
            err(f"{sp}/name", f"duplicate subtask name {s.name!r}")
        seen_names.add(s.name)

        if s.type is SubtaskType.MANIPULATION and s.manipulation is None:
            err(f"{sp}/manipulation", "MANIPULATION subtask needs manipulation.action")
        if s.type is SubtaskType.LOCOMOTION and s.locomotion is None:
            err(f"{sp}/locomotion", "LOCOMOTION subtask needs locomotion.primitive")
        if s.manipulation is not None and s.manipulation.action in (Action.PLACE, Action.HANDOVER) and not (
            s.destination.phrase or s.destination.ref
        ):
            err(f"{sp}/destination/phrase", "placing subtask needs a destination")
        if s.timeout_sec <= 0:
            err(f"{sp}/timeout_sec", "must be > 0")
        if s.max_retry < 0:
            err(f"{sp}/max_retry", "must be >= 0")

        known |= _declared(s)
        for j, (_, ref) in enumerate(s.target.relations):
            if ref not in known:
                err(f"{sp}/target/relations/{j}/ref", f"unresolved ref {ref!r}")
        if s.locomotion is not None:
            if s.locomotion.goal_ref is not None and s.locomotion.goal_ref not in known:
                err(f"{sp}/locomotion/goal/ref", f"unresolved ref {s.locomotion.goal_ref!r}")
            if s.locomotion.standoff is not None and s.locomotion.standoff < 0:
                err(f"{sp}/locomotion/goal/standoff", "must be >= 0")

        for block in ("preconditions", "success_conditions"):
            for j, pred in enumerate(getattr(s, block)):
                _check_predicate(pred, f"{sp}/{block}/{j}", known, err)

        for j, h in enumerate(s.failure_handlers):
            hp = f"{sp}/failure_handlers/{j}"
            if h.on not in PREDICATES and h.on not in ("timeout", "uncertain", "any"):
                err(f"{hp}/on", f"unknown trigger {h.on!r}")
            if h.do not in RECOVERY_OPERATORS:
                err(f"{hp}/do", f"unknown recovery operator {h.do!r}")
    return ValidationReport(tuple(issues))


def _check_predicate(pred: PredicateAssertion, path: str, known: set[str], err) -> None:
    if pred.stable_frames < 1:
        err(f"{path}/stable_frames", "must be >= 1")
    if pred.op not in COMPARATORS:
        err(f"{path}/op", f"unknown comparator {pred.op!r}")
    sig = PREDICATES.get(pred.key)
    if sig is None:
        err(f"{path}/key", f"unknown predicate key {pred.key!r}")
        return
    if sig.boolean:
        if pred.op not in ("==", "!=") or not isinstance(pred.value, bool):
            err(f"{path}/value", f"{pred.key} is boolean: use ==/!= with true/false")
    elif isinstance(pred.value, bool):
        err(f"{path}/value", f"{pred.key} is scalar: value must be a number")
    args = pred.args_dict
    for role in sig.roles:
        if role not in args:
            err(f"{path}/args/{role}", "missing argument")
    for role in args:
        if role not in sig.roles and role not in sig.optional_roles:
            err(f"{path}/args/{role}", f"unexpected argument for {pred.key}")
    for role, v in args.items():
        if role == "arm":
            if v not in (Arm.LEFT.value, Arm.RIGHT.value):
                err(f"{path}/args/arm", f"unknown arm {v!r}")
        elif role in sig.ref_roles():
            if not isinstance(v, str):
                err(f"{path}/args/{role}", "expected a ref")
            elif v not in known:
                err(f"{path}/args/{role}", f"unresolved ref {v!r}")


# --------------------------------------------------------------------------
# Entity collection


@dataclass(frozen=True)
class EntityEntry:
    role: str  # target | destination | relation_reference | predicate_reference
    ref: str
    phrase: str | None = None


@dataclass(frozen=True)
class EntitySet:
    entries: tuple[EntityEntry, ...] = field(default_factory=tuple)

    def refs(self) -> tuple[str, ...]:
        return tuple(e.ref for e in self.entries)

    def __contains__(self, ref: object) -> bool:
        return any(e.ref == ref for e in self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, ref: str) -> EntityEntry | None:
        for e in self.entries:
            if e.ref == ref:
                return e
        return None


def collect_entities(subtask: Subtask) -> EntitySet:
    """Task-relevant entities of one subtask: target, destination, refs named
    in ``target.relations`` and refs appearing in predicate arguments.
    Deduplicated by ref; the first role wins."""
    entries: dict[str, EntityEntry] = {}

    def add(role: str, ref: str | None, phrase: str | None = None) -> None:
        if ref and ref not in entries:
            entries[ref] = EntityEntry(role, ref, phrase)

    add("target", subtask.target.ref, subtask.target.phrase)
    add("destination", destination_ref(subtask), subtask.destination.phrase or None)
    for _, ref in subtask.target.relations:
        add("relation_reference", ref)
    for pred in subtask.preconditions + subtask.success_conditions:
        for ref in pred.refs():
            add("predicate_reference", ref)
    return EntitySet(tuple(entries.values()))


def predicates_of(subtask: Subtask) -> Mapping[str, tuple[PredicateAssertion, ...]]:
    return {"preconditions": subtask.preconditions, "success_conditions": subtask.success_conditions}
