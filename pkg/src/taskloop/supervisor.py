"""Predicate monitoring over the workspace state: instantaneous evaluation,
stable-frame windows, readiness/completion, statuses, diagnostics and the
uncertain flag, plus optional semantic verification."""

from __future__ import annotations

import math
import operator
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np

from .geometry import footprint_contains
from .grounding import EntityTrack, UnknownRef, WorkspaceState
from .program import PREDICATES, ROBOT_REF, PredicateAssertion, Subtask

__all__ = [
    "ConditionFlag",
    "PredicateState",
    "Status",
    "Supervisor",
    "SupervisorConfig",
    "SupervisorReport",
    "UnknownPredicateKey",
    "UntrackedRef",
    "VerifierUnavailable",
    "VerifierVerdict",
    "eval_instant",
    "measure",
    "sat",
    "windowed_product",
]

IN_PROGRESS = "in_progress"
DONE = "done"
BLOCKED = "blocked"
FAILED = "failed"


class Status:
    IN_PROGRESS = IN_PROGRESS
    DONE = DONE
    BLOCKED = BLOCKED
    FAILED = FAILED
    ALL = (IN_PROGRESS, DONE, BLOCKED, FAILED)


class UnknownPredicateKey(KeyError):
    pass


class UntrackedRef(KeyError):
    pass


class VerifierUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class SupervisorConfig:
    q_vis: float = 0.5
    eps_h: float = 0.02
    support_margin: float = 0.01
    inside_margin: float = 0.01
    inside_top_slack: float = 0.05
    d_grasp: float = 0.06
    reach: float = 0.85
    q_uncertain: float = 0.35
    unseen_uncertain: int = 5
    band: float = 0.10
    robot_radius: float = 0.22


# --------------------------------------------------------------------------
# Measures


def _track(ws: WorkspaceState, ref: str) -> EntityTrack:
    t = ws.tracks.get(ref)
    if t is None:
        raise UntrackedRef(ref)
    return t


def _xy(ws: WorkspaceState, ref: str) -> np.ndarray:
    if ref == ROBOT_REF:
        return np.asarray(ws.robot.base[:2], dtype=float)
    return _track(ws, ref).center[:2]


def _inside_footprint(obj: EntityTrack, sup: EntityTrack, margin: float) -> bool:
    return footprint_contains(sup.center, 0.0, sup.extent, float(obj.center[0]), float(obj.center[1]), margin)


def _boxes_overlap(a: EntityTrack, b: EntityTrack, tol: float = 0.005) -> bool:
    return bool(np.all(np.abs(a.center - b.center) < a.extent + b.extent - tol))


def measure(key: str, args: Mapping[str, Any], ws: WorkspaceState, cfg: SupervisorConfig = SupervisorConfig()) -> float:
    """Geometric measure phi(k, a; W_t); booleans are encoded 0/1."""
    if key not in PREDICATES:
        raise UnknownPredicateKey(key)
    if key == "VISIBLE":
        t = _track(ws, args["object"])
        return float(t.seen and t.confidence >= cfg.q_vis)
    if key == "SUPPORTED_BY":
        o, s = _track(ws, args["object"]), _track(ws, args["support"])
        gap = o.bottom - s.top
        return float(abs(gap) <= cfg.eps_h and _inside_footprint(o, s, cfg.support_margin))
    if key == "INSIDE":
        o, c = _track(ws, args["object"]), _track(ws, args["container"])
        return float(
            _inside_footprint(o, c, -cfg.inside_margin)
            and o.bottom >= c.bottom - cfg.eps_h
            and o.top <= c.top + cfg.inside_top_slack
        )
    if key == "GRASPED":
        arm = args["arm"]
        if ws.robot.gripper.get(arm) != "closed":
            return 0.0
        t = _track(ws, args["object"])
        d = float(np.linalg.norm(np.asarray(ws.robot.ee[arm]) - t.center))
        return float(d <= cfg.d_grasp)
    if key == "NEAR":
        return float(np.linalg.norm(_xy(ws, args["subject"]) - _xy(ws, args["reference"])))
    if key == "EE_DISTANCE":
        t = _track(ws, args["object"])
        return float(np.linalg.norm(np.asarray(ws.robot.ee[args["arm"]]) - t.center))
    if key == "ALIGNED":
        a, b = _track(ws, args["object"]), _track(ws, args["reference"])
        return math.acos(min(1.0, abs(float(np.dot(a.axis, b.axis)))))
    if key == "REACHABLE":
        t = _track(ws, args["object"])
        sh = ws.robot.shoulders.get(args["arm"])
        if sh is None:
            raise UntrackedRef(f"shoulder {args['arm']}")
        return float(float(np.linalg.norm(np.asarray(sh) - t.center)) <= cfg.reach)
    if key == "BALANCE_OK":
        return float(ws.robot.stance_ok)
    if key == "NO_COLLISION":
        ref = args["object"]
        o = _track(ws, ref)
        held = ws.robot.held[1] if ws.robot.held else None
        for r, t in ws.tracks.items():
            if r == ref or not t.seen or r == held or ref == held:
                continue
            if _boxes_overlap(o, t):
                return 0.0
        return 1.0
    raise UnknownPredicateKey(key)


_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def compare(phi: float, op: str, v: Any) -> bool:
    if isinstance(v, bool):
        v = 1.0 if v else 0.0
    return bool(_OPS[op](phi, v))


def eval_instant(p: PredicateAssertion, ws: WorkspaceState, cfg: SupervisorConfig = SupervisorConfig()) -> int:
    return int(compare(measure(p.key, p.args_dict, ws, cfg), p.op, p.value))


# --------------------------------------------------------------------------
# Stable-frame windows


@dataclass
class PredicateState:
    predicate: PredicateAssertion
    history: deque = field(default_factory=deque)
    last_measure: float | None = None

    def __post_init__(self):
        self.history = deque(self.history, maxlen=self.predicate.stable_frames)

    def push(self, bit: int, phi: float | None = None) -> bool:
        self.history.append(1 if bit else 0)
        self.last_measure = phi
        return self.satisfied

    def reset(self) -> None:
        self.history.clear()
        self.last_measure = None

    @property
    def satisfied(self) -> bool:
        return sat(self)


def sat(ps: PredicateState) -> bool:
    """1 iff the window is full and every entry is 1."""
    n = ps.predicate.stable_frames
    return len(ps.history) == n and all(ps.history)


def windowed_product(bits: Sequence[int], n: int, t: int) -> int:
    """Reference form: prod_{j=0}^{n-1} bits[t-j], zero before n frames exist."""
    if t - n + 1 < 0:
        return 0
    out = 1
    for j in range(n):
        out *= bits[t - j]
    return out


# --------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class ConditionFlag:
    id: str
    label: str
    satisfied: bool
    instant: bool
    measure: float | None
    error: str | None = None


@dataclass(frozen=True)
class SupervisorReport:
    subtask_id: int
    status: str
    uncertain: bool
    preconditions: tuple[ConditionFlag, ...]
    success: tuple[ConditionFlag, ...]
    diagnostics: Mapping[str, float]
    elapsed: float
    ready: bool
    engaged: bool
    reason: str | None = None
    uncertain_reasons: tuple[str, ...] = ()
    reobserve: bool = False

    def failing_preconditions(self) -> tuple[ConditionFlag, ...]:
        return tuple(f for f in self.preconditions if not f.satisfied)

    def failing_success(self) -> tuple[ConditionFlag, ...]:
        return tuple(f for f in self.success if not f.satisfied)

    def to_dict(self) -> dict:
        def flags(fs):
            return [
                {"id": f.id, "label": f.label, "sat": f.satisfied, "bit": f.instant, "phi": None if f.measure is None else round(f.measure, 6)}
                for f in fs
            ]

        return {
            "subtask_id": self.subtask_id,
            "status": self.status,
            "uncertain": self.uncertain,
            "ready": self.ready,
            "engaged": self.engaged,
            "reason": self.reason,
            "preconditions": flags(self.preconditions),
            "success": flags(self.success),
            "diagnostics": {k: round(v, 6) for k, v in sorted(self.diagnostics.items())},
            "elapsed": round(self.elapsed, 6),
        }


# --------------------------------------------------------------------------
# Semantic verification


@dataclass(frozen=True)
class VerifierVerdict:
    completed: bool
    rationale: str
    source: str


class Verifier(Protocol):
    def verify(self, subtask: Subtask, evidence: Mapping[str, Any]) -> VerifierVerdict | None: ...


class StubVerifier:
    """Always abstains."""

    def verify(self, subtask: Subtask, evidence: Mapping[str, Any]) -> VerifierVerdict | None:
        return None


class ScriptedVerifier:
    """Returns verdicts from a fixed script, then abstains."""

    def __init__(self, verdicts: Sequence[bool | None]):
        self._v = list(verdicts)
        self.calls = 0

    def verify(self, subtask: Subtask, evidence: Mapping[str, Any]) -> VerifierVerdict | None:
        self.calls += 1
        if not self._v:
            return None
        v = self._v.pop(0)
        return None if v is None else VerifierVerdict(bool(v), "scripted", "scripted")


class ExternalVerifier:
    """Posts the evidence summary to an HTTP endpoint (same wire contract as the planner)."""

    def __init__(self, url: str, deadline: float = 5.0):
        self.url = url
        self.deadline = deadline

    def verify(self, subtask: Subtask, evidence: Mapping[str, Any]) -> VerifierVerdict | None:
        import httpx

        try:
            r = httpx.post(self.url, json={"subtask": subtask.name, "evidence": evidence}, timeout=self.deadline)
            r.raise_for_status()
            d = r.json()
            return VerifierVerdict(bool(d["completed"]), str(d.get("rationale", "")), "external")
        except Exception as exc:  # any transport or format problem means abstain
            raise VerifierUnavailable(str(exc)) from exc


# --------------------------------------------------------------------------
# Supervisor


class Supervisor:
    """Monitors one active subtask at a time.

    Preconditions are gated until every one of them has been satisfied at
    the same tick (Ready); from then on the subtask is engaged and only the
    invariant safety predicates keep being enforced.  Histories reset on
    activation and after every recovery.
    """

    def __init__(self, cfg: SupervisorConfig = SupervisorConfig(), verifier: Verifier | None = None, dt: float = 0.1):
        self.cfg = cfg
        self.verifier = verifier
        self.dt = dt
        self.subtask: Subtask | None = None
        self.pre: list[PredicateState] = []
        self.succ: list[PredicateState] = []
        self.start_tick = 0
        self.engaged = False
        self._defer_done = False
        self._verifier_ok = False
        self.verdicts: list[VerifierVerdict] = []

    def activate(self, subtask: Subtask, tick: int) -> None:
        self.subtask = subtask
        self.start_tick = tick
        self.reset_histories()

    def reset_histories(self, keep_engaged: bool = False) -> None:
        assert self.subtask is not None
        self.pre = [PredicateState(p) for p in self.subtask.preconditions]
        self.succ = [PredicateState(p) for p in self.subtask.success_conditions]
        if not keep_engaged:
            self.engaged = False
        self._defer_done = False
        self._verifier_ok = False

    def restart_clock(self, tick: int) -> None:
        self.start_tick = tick

    def _flag(self, ps: PredicateState, ident: str, ws: WorkspaceState, push: bool) -> ConditionFlag:
        p = ps.predicate
        err = None
        try:
            phi = measure(p.key, p.args_dict, ws, self.cfg)
            bit = int(compare(phi, p.op, p.value))
        except (UntrackedRef, UnknownRef) as exc:
            phi, bit, err = None, 0, f"untracked:{exc.args[0]}"
        if push:
            ps.push(bit, phi)
        return ConditionFlag(ident, p.label(), sat(ps), bool(bit), phi, err)

    def tick(self, ws: WorkspaceState, tick: int, executor_fault: str | None = None, evidence: Mapping[str, Any] | None = None) -> SupervisorReport:
        s = self.subtask
        if s is None:
            raise RuntimeError("no active subtask")
        elapsed = (tick - self.start_tick) * self.dt
        pre_flags = tuple(self._flag(ps, f"pre{i}", ws, True) for i, ps in enumerate(self.pre))
        succ_flags = tuple(self._flag(ps, f"succ{i}", ws, True) for i, ps in enumerate(self.succ))

        ready = all(f.satisfied for f in pre_flags)
        if ready:
            self.engaged = True
        gating = [
            f
            for f, ps in zip(pre_flags, self.pre)
            if not (self.engaged and not PREDICATES[ps.predicate.key].invariant) and not f.satisfied
        ]
        safety_violation = [f for f, ps in zip(pre_flags, self.pre) if PREDICATES[ps.predicate.key].invariant and not f.instant and len(ps.history) > 0]
        done_geo = bool(succ_flags) and all(f.satisfied for f in succ_flags)

        uncertain, reasons = self._uncertain(s, ws, pre_flags + succ_flags)
        diag = self._diagnostics(s, ws, pre_flags + succ_flags)

        reason = None
        reobserve = False
        if safety_violation:
            status, reason = FAILED, "safety:" + ",".join(f.label for f in safety_violation)
        elif done_geo and self.engaged:
            status = DONE
            if self.verifier is not None and not self._defer_done:
                verdict = self._consult(s, ws, evidence, diag)
                if verdict is not None and not verdict.completed:
                    # disagreement: look again before committing
                    self._defer_done = True
                    status, reobserve = IN_PROGRESS, True
        elif elapsed > s.timeout_sec:
            status, reason = FAILED, "timeout"
        elif executor_fault is not None and self.engaged:
            status, reason = FAILED, f"executor:{executor_fault}"
        elif gating:
            status = BLOCKED
        else:
            status = IN_PROGRESS
            if uncertain and self.verifier is not None and self.engaged:
                verdict = self._consult(s, ws, evidence, diag)
                if verdict is not None and verdict.completed:
                    reobserve = True
        if status == DONE:
            self._defer_done = False
        return SupervisorReport(
            s.subtask_id,
            status,
            uncertain,
            pre_flags,
            succ_flags,
            diag,
            elapsed,
            ready,
            self.engaged,
            reason,
            reasons,
            reobserve,
        )

    def _consult(self, s: Subtask, ws: WorkspaceState, evidence, diag) -> VerifierVerdict | None:
        try:
            v = self.verifier.verify(s, {"diagnostics": dict(diag), **(evidence or {})})
        except VerifierUnavailable:
            return None
        if v is not None:
            self.verdicts.append(v)
        return v

    def _uncertain(self, s: Subtask, ws: WorkspaceState, flags) -> tuple[bool, tuple[str, ...]]:
        cfg = self.cfg
        reasons: list[str] = []
        refs: list[str] = []
        for ps in self.pre + self.succ:
            for r in ps.predicate.refs():
                if r != ROBOT_REF and r not in refs:
                    refs.append(r)
        for r in refs:
            t = ws.tracks.get(r)
            if t is None:
                continue
            if t.confidence < cfg.q_uncertain:
                reasons.append(f"low_q:{r}")
            if t.frames_since_seen > cfg.unseen_uncertain:
                reasons.append(f"unseen:{r}")
        for f, ps in zip(flags, self.pre + self.succ):
            p = ps.predicate
            if PREDICATES[p.key].boolean or f.measure is None:
                continue
            v = float(p.value)
            if abs(f.measure - v) <= cfg.band * abs(v):
                reasons.append(f"band:{f.id}")
        return bool(reasons), tuple(reasons)

    def _diagnostics(self, s: Subtask, ws: WorkspaceState, flags) -> dict[str, float]:
        d: dict[str, float] = {}
        for f in flags:
            if f.measure is not None:
                d[f"phi.{f.id}"] = float(f.measure)
        rel_refs = []
        for ps in self.pre + self.succ:
            p = ps.predicate
            a = p.args_dict
            try:
                if p.key in ("SUPPORTED_BY", "INSIDE"):
                    o = _track(ws, a["object"])
                    other = _track(ws, a.get("support") or a.get("container"))
                    d[f"gap.{o.ref}.{other.ref}"] = o.bottom - other.top
                    d[f"dist.{o.ref}.{other.ref}"] = float(np.linalg.norm(o.center[:2] - other.center[:2]))
                    d[f"align.{o.ref}.{other.ref}"] = math.acos(min(1.0, abs(float(np.dot(o.axis, other.axis)))))
                elif p.key in ("GRASPED", "EE_DISTANCE", "REACHABLE"):
                    o = _track(ws, a["object"])
                    d[f"ee.{a['arm']}.{o.ref}"] = float(np.linalg.norm(np.asarray(ws.robot.ee[a["arm"]]) - o.center))
            except (UntrackedRef, KeyError):
                pass
            rel_refs.extend(r for r in p.refs() if r != ROBOT_REF)
        for r in dict.fromkeys(rel_refs):
            t = ws.tracks.get(r)
            if t is not None:
                d[f"q.{r}"] = float(t.confidence)
                d[f"stability.{r}"] = float(t.stability)
        return d
