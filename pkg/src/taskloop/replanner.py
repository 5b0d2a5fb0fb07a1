"""Feedback records, recovery-operator selection under retry budgets, plan
revision by template insertion, and budget-exhausted replanning that keeps
the completed prefix intact."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Protocol, Sequence

from .program import (
    PREDICATES,
    ROBOT_REF,
    Action,
    Arm,
    EntitySpec,
    LocomotionSpec,
    ManipulationSpec,
    PredicateAssertion,
    Primitive,
    RecoveryDirective,
    Subtask,
    SubtaskType,
    TaskProgram,
    serialize_subtask,
    validate_program,
)

__all__ = [
    "ESCALATE",
    "FailingPredicate",
    "FeedbackRecord",
    "InvalidStatus",
    "PlanValidationError",
    "PlannerError",
    "RecoveryAction",
    "RetryState",
    "build_feedback",
    "failing_set",
    "insert_subtask",
    "reopen_template",
    "reposition_template",
    "request_replan",
    "search_template",
    "select_recovery",
]

ESCALATE = "ESCALATE"


class InvalidStatus(ValueError):
    pass


class PlannerError(RuntimeError):
    pass


class PlanValidationError(ValueError):
    pass


@dataclass(frozen=True)
class FailingPredicate:
    id: str
    key: str
    args: tuple[tuple[str, Any], ...]
    op: str
    value: Any
    measure: float | None

    def to_dict(self) -> dict:
        return {"id": self.id, "key": self.key, "args": dict(self.args), "op": self.op, "value": self.value, "measure": self.measure}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FailingPredicate":
        return cls(d["id"], d["key"], tuple(d["args"].items()), d["op"], d["value"], d["measure"])


@dataclass(frozen=True)
class FeedbackRecord:
    subtask_id: int
    name: str
    summary: str
    status: str  # blocked | failed | uncertain
    failing: tuple[FailingPredicate, ...]
    diagnostics: Mapping[str, float]
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "subtask_id": self.subtask_id,
            "name": self.name,
            "summary": self.summary,
            "status": self.status,
            "failing": [f.to_dict() for f in self.failing],
            "diagnostics": {k: round(float(v), 6) for k, v in sorted(self.diagnostics.items())},
            "reason": self.reason,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=False)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FeedbackRecord":
        return cls(
            d["subtask_id"],
            d["name"],
            d["summary"],
            d["status"],
            tuple(FailingPredicate.from_dict(f) for f in d["failing"]),
            dict(d["diagnostics"]),
            d.get("reason"),
        )

    @classmethod
    def from_json(cls, text: str) -> "FeedbackRecord":
        return cls.from_dict(json.loads(text))

    def keys(self) -> set[str]:
        return {f.key for f in self.failing}


def failing_set(subtask: Subtask, pre_states: Sequence, succ_states: Sequence, status: str) -> tuple[FailingPredicate, ...]:
    """Unsatisfied preconditions when blocked, unsatisfied success
    conditions when failed.

    The state sequences hold objects with ``predicate``, ``satisfied`` and
    ``last_measure`` (supervisor predicate states) in declaration order.
    """
    if status == "blocked":
        states, prefix = pre_states, "pre"
    elif status == "failed":
        states, prefix = succ_states, "succ"
    else:
        raise InvalidStatus(status)
    out = []
    for i, ps in enumerate(states):
        if not ps.satisfied:
            p: PredicateAssertion = ps.predicate
            m = ps.last_measure
            out.append(FailingPredicate(f"{prefix}{i}", p.key, p.args, p.op, p.value, None if m is None else round(float(m), 6)))
    return tuple(out)


def _summary(s: Subtask) -> str:
    if s.manipulation is not None:
        act = f"{s.manipulation.action.value} {s.target.phrase}"
        if s.destination.phrase:
            act += f" -> {s.destination.phrase}"
        return act
    if s.locomotion is not None:
        return f"{s.locomotion.primitive.value} {s.locomotion.goal_ref or 'pose'}"
    return s.name


def build_feedback(subtask: Subtask, status: str, failing: Sequence[FailingPredicate], diagnostics: Mapping[str, float], reason: str | None = None) -> FeedbackRecord:
    if status not in ("blocked", "failed", "uncertain"):
        raise InvalidStatus(status)
    return FeedbackRecord(subtask.subtask_id, subtask.name, _summary(subtask), status, tuple(failing), dict(diagnostics), reason)


# --------------------------------------------------------------------------
# Recovery selection


@dataclass(frozen=True)
class RecoveryAction:
    operator: str  # RE_OBSERVE | RE_GROUND | ADAPT_PARAMS | TASK_REVISION
    params: tuple[tuple[str, Any], ...] = ()

    def param(self, k: str, default: Any = None) -> Any:
        return dict(self.params).get(k, default)

    def to_dict(self) -> dict:
        return {"operator": self.operator, "params": dict(self.params)}


ADAPT_MIN, ADAPT_MAX = 0.5, 2.0


@dataclass
class RetryState:
    """Attempts and elapsed time per subtask name.  An attempt is one
    execution of the subtask body; the first execution counts."""

    attempts: dict[str, int] = field(default_factory=dict)
    elapsed: dict[str, float] = field(default_factory=dict)
    last_operator: dict[str, str] = field(default_factory=dict)

    def start(self, name: str) -> int:
        self.attempts[name] = self.attempts.get(name, 0) + 1
        return self.attempts[name]

    def used(self, name: str) -> int:
        return self.attempts.get(name, 0)

    def exhausted(self, s: Subtask) -> bool:
        return self.used(s.name) >= s.max_retry + 1

    def add_time(self, name: str, dt: float) -> None:
        self.elapsed[name] = self.elapsed.get(name, 0.0) + dt


def _handler_matches(h: RecoveryDirective, f: FeedbackRecord) -> bool:
    if h.on == "any":
        return True
    if h.on == "timeout":
        return f.reason == "timeout"
    if h.on == "uncertain":
        return f.status == "uncertain"
    return h.on in f.keys()


def select_recovery(f: FeedbackRecord, handlers: Sequence[RecoveryDirective], rs: RetryState, max_retry: int) -> RecoveryAction | str:
    """Budget check, then the first matching handler, then the default policy."""
    if rs.used(f.name) >= max_retry + 1:
        return ESCALATE
    for h in handlers:
        if _handler_matches(h, f):
            return RecoveryAction(h.do, h.params)
    keys = f.keys()
    last = rs.last_operator.get(f.name)
    perceptual = f.status == "uncertain" or "VISIBLE" in keys or (f.reason or "").startswith("untracked")
    if perceptual or (f.status == "failed" and not f.failing):
        op = "RE_GROUND" if last in ("RE_OBSERVE", "RE_GROUND") else "RE_OBSERVE"
        return RecoveryAction(op, _targets(f))
    small = _small_scalar_error(f)
    if small is not None:
        fp, mult = small
        return RecoveryAction("ADAPT_PARAMS", (("predicate", fp.id), ("multiplier", mult)))
    template = "reopen" if "GRASPED" in keys and f.status == "failed" else "reposition"
    return RecoveryAction("TASK_REVISION", (("template", template),) + _targets(f))


def _targets(f: FeedbackRecord) -> tuple[tuple[str, Any], ...]:
    refs: list[str] = []
    for fp in f.failing:
        sig = PREDICATES.get(fp.key)
        roles = sig.ref_roles() if sig else ()
        for k, v in fp.args:
            if k in roles and isinstance(v, str) and v != ROBOT_REF and v not in refs:
                refs.append(v)
    return (("refs", tuple(refs)),) if refs else ()


def _small_scalar_error(f: FeedbackRecord) -> tuple[FailingPredicate, float] | None:
    for fp in f.failing:
        sig = PREDICATES.get(fp.key)
        if sig is None or sig.boolean or fp.measure is None:
            continue
        v = float(fp.value)
        if v == 0:
            continue
        if abs(fp.measure - v) <= 0.25 * abs(v):
            mult = v / fp.measure if fp.measure > 0 else ADAPT_MAX
            return fp, min(ADAPT_MAX, max(ADAPT_MIN, mult))
    return None


# --------------------------------------------------------------------------
# Templates and plan edits


def _pred(key: str, args: Mapping[str, Any], op: str, value: Any, n: int) -> PredicateAssertion:
    return PredicateAssertion(key, tuple(args.items()), op, value, n)


def reposition_template(s: Subtask, name: str, standoff: float = 0.55) -> Subtask:
    """Walk (or carry) back to a standoff in front of the subtask's target."""
    ref = s.target.ref
    prim = Primitive.FORWARD_WALK
    return Subtask(
        subtask_id=s.subtask_id,
        type=SubtaskType.LOCOMOTION,
        name=name,
        target=EntitySpec(ref, s.target.phrase, s.target.category),
        locomotion=LocomotionSpec(prim, goal_ref=ref, standoff=standoff),
        preconditions=(_pred("BALANCE_OK", {}, "==", True, 1),),
        success_conditions=(_pred("NEAR", {"subject": ROBOT_REF, "reference": ref}, "<=", standoff + 0.3, 3),),
        timeout_sec=20,
        max_retry=1,
    )


def search_template(s: Subtask, name: str) -> Subtask:
    """Turn in place until the target is seen."""
    ref = s.target.ref
    return Subtask(
        subtask_id=s.subtask_id,
        type=SubtaskType.LOCOMOTION,
        name=name,
        target=EntitySpec(ref, s.target.phrase, s.target.category),
        locomotion=LocomotionSpec(Primitive.TURN_LEFT, goal_ref=ref, standoff=0.55),
        preconditions=(_pred("BALANCE_OK", {}, "==", True, 1),),
        success_conditions=(_pred("VISIBLE", {"object": ref}, "==", True, 3),),
        timeout_sec=20,
        max_retry=1,
    )


def reopen_template(s: Subtask, name: str) -> Subtask:
    arm = s.manipulation.arm if s.manipulation else Arm.RIGHT
    return Subtask(
        subtask_id=s.subtask_id,
        type=SubtaskType.MANIPULATION,
        name=name,
        target=EntitySpec(s.target.ref, s.target.phrase, s.target.category),
        manipulation=ManipulationSpec(arm, Action.RELEASE, False),
        preconditions=(_pred("BALANCE_OK", {}, "==", True, 1),),
        success_conditions=(_pred("GRASPED", {"object": s.target.ref, "arm": arm.value}, "==", False, 2),),
        timeout_sec=10,
        max_retry=1,
    )


TEMPLATES = {"reposition": reposition_template, "reopen": reopen_template, "search": search_template}


def _fresh_name(program: TaskProgram, base: str) -> str:
    names = {s.name for s in program.subtasks}
    k = 1
    while f"{base}_{k}" in names:
        k += 1
    return f"{base}_{k}"


def insert_subtask(program: TaskProgram, before_id: int, template: str) -> tuple[TaskProgram, Subtask]:
    """Insert a templated corrective subtask before ``before_id`` and shift
    the ids of it and everything after by one.  Earlier subtasks are
    untouched."""
    i = program.index_of(before_id)
    s = program.subtasks[i]
    new = TEMPLATES[template](s, _fresh_name(program, f"{s.name}_{template}"))
    new = replace(new, subtask_id=s.subtask_id)
    tail = tuple(replace(t, subtask_id=t.subtask_id + 1) for t in program.subtasks[i:])
    return TaskProgram(program.task_id, program.command, program.subtasks[:i] + (new,) + tail), new


# --------------------------------------------------------------------------
# Replanning


class ReplanningPlanner(Protocol):
    def replan(self, program: TaskProgram, feedback: FeedbackRecord, completed: Sequence[int]) -> TaskProgram: ...


def request_replan(
    planner: ReplanningPlanner,
    feedback: FeedbackRecord,
    program: TaskProgram,
    completed: Sequence[int],
    workspace_refs: Sequence[str] = (),
) -> TaskProgram:
    """Ask the planner for an updated program and check that completed
    subtasks survive byte-for-byte as a prefix and that the result validates."""
    try:
        new = planner.replan(program, feedback, completed)
    except PlannerError:
        raise
    except Exception as exc:  # planner crashes are planner failures
        raise PlannerError(str(exc)) from exc
    done = [s for s in program.subtasks if s.subtask_id in set(completed)]
    if len(new.subtasks) < len(done):
        raise PlanValidationError("updated plan drops completed subtasks")
    for old, kept in zip(done, new.subtasks):
        if serialize_subtask(old) != serialize_subtask(kept):
            raise PlanValidationError(f"completed subtask {old.subtask_id} was modified")
    refs = set(workspace_refs) | {ROBOT_REF}
    report = validate_program(new, refs | {"table_1"})
    if not report.ok:
        raise PlanValidationError(report.summary())
    return new


def rule_replan(program: TaskProgram, feedback: FeedbackRecord, completed: Sequence[int], round_no: int = 1) -> TaskProgram:
    """Deterministic revision: keep the completed prefix, insert a
    repositioning (or search) subtask before the stuck one, and re-issue the
    remaining subtasks under fresh names so they get a fresh budget."""
    done = set(completed)
    prefix = tuple(s for s in program.subtasks if s.subtask_id in done)
    rest = [s for s in program.subtasks if s.subtask_id not in done]
    if not rest:
        return program
    stuck = next((s for s in rest if s.subtask_id == feedback.subtask_id), rest[0])
    start = rest.index(stuck)
    rest = rest[start:]
    next_id = (prefix[-1].subtask_id if prefix else 0) + 1
    untracked = (feedback.reason or "").startswith("untracked") or any(
        fp.key == "VISIBLE" and fp.measure is None for fp in feedback.failing
    )
    maker = search_template if untracked or stuck.type is SubtaskType.LOCOMOTION else reposition_template
    fix = replace(maker(stuck, f"{stuck.name}_fix_r{round_no}"), subtask_id=next_id)
    out = [fix]
    for s in rest:
        next_id += 1
        out.append(replace(s, subtask_id=next_id, name=f"{_base_name(s.name)}_r{round_no}"))
    return TaskProgram(program.task_id, program.command, prefix + tuple(out))


def _base_name(name: str) -> str:
    head, sep, tail = name.rpartition("_r")
    return head if sep and tail.isdigit() else name
