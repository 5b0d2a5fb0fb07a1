"""Seeded closed-loop trials: survey, plan, then per tick render, ground,
supervise, recover, execute and step, with a JSONL trace of every tick."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .executor import Coordinator, ExecutorConfig, Mode
from .grounding import (
    Candidate,
    Grounder,
    GroundingConfig,
    GroundingRequest,
    RobotSnapshot,
    WorkspaceState,
    touches_border,
    update_workspace,
)
from .planner import EntityLabel, PlannerConfig, SceneSummary, make_planner, summarize_workspace, workspace_refs
from .program import ROBOT_REF, PREDICATES, Subtask, collect_entities, destination_ref, program_to_dict
from .replanner import (
    ESCALATE,
    FailingPredicate,
    FeedbackRecord,
    PlannerError,
    PlanValidationError,
    RecoveryAction,
    RetryState,
    build_feedback,
    failing_set,
    insert_subtask,
    request_replan,
    select_recovery,
)
from .scenarios import ScenarioSpec, _seed_rng, calibrated_noise, check_oracle, load_scenario, spawn_scenario
from .sim import BODY, DT, ControlCommand, NoiseModel, RenderCache, SimWorld, render_observation, step
from .supervisor import Supervisor, SupervisorConfig, SupervisorReport, Verifier
from .trace import TraceWriter

__all__ = [
    "SuccessTable",
    "TrialConfig",
    "TrialResult",
    "resolve_noise",
    "run_suite",
    "run_trial",
    "survey",
]

CALIBRATED = "calibrated"
ROLE_ORDER = {"clutter": 0, "item": 0, "container": 1, "support": 2, "person": 3}
REF_PREFIX = {"clutter": "obj", "item": "obj", "container": "container", "support": "table", "person": "person"}


@dataclass(frozen=True)
class TrialConfig:
    seed: int = 0
    noise: NoiseModel | Mapping[str, Any] | str | None = None  # None: noiseless; "calibrated": scenario profile
    supervisor_enabled: bool = True
    recovery_enabled: bool = True
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    max_sim_time: float | None = None  # None: the scenario's limit
    survey_ticks: int = 5
    blocked_patience: int = 5
    uncertain_patience: int = 5
    held_radius: float = 0.1  # a held object is only measured this close to its predicted track
    reground_radius: float = 0.2  # a rebuilt track is re-acquired only this far beyond its old extent
    band_progress: float = 0.015  # per-tick change (fraction of threshold) that marks a band measure as moving
    reobserve_hold: int = 3
    max_replans: int = 2
    stance_faults: tuple[tuple[int, int], ...] | None = None
    record_truth: bool = False
    grounding: GroundingConfig = field(default_factory=GroundingConfig)
    supervisor: SupervisorConfig = field(default_factory=SupervisorConfig)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)


@dataclass
class TrialResult:
    scenario: str
    seed: int
    supervisor_enabled: bool
    success: bool
    ticks: int
    outcome: str  # program_done | oracle | failed:<why> | time_limit
    subtasks: list[tuple[str, str]] = field(default_factory=list)
    recoveries: dict[str, int] = field(default_factory=dict)
    replans: int = 0
    trace: TraceWriter = field(default_factory=TraceWriter, repr=False)
    trace_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "supervisor_enabled": self.supervisor_enabled,
            "success": self.success,
            "ticks": self.ticks,
            "outcome": self.outcome,
            "subtasks": [list(s) for s in self.subtasks],
            "recoveries": dict(sorted(self.recoveries.items())),
            "replans": self.replans,
            "trace_path": self.trace_path,
        }


def resolve_noise(spec: ScenarioSpec, seed: int, noise) -> NoiseModel:
    if noise is None:
        return NoiseModel()
    if isinstance(noise, NoiseModel):
        return noise
    if noise == CALIBRATED:
        return calibrated_noise(spec, seed)
    if isinstance(noise, Mapping):
        d = dict(noise)
        if "bursts" in d:
            return calibrated_noise(spec, seed, d)
        return NoiseModel.from_dict(d)
    raise ValueError(f"unsupported noise setting {noise!r}")


# --------------------------------------------------------------------------
# Perception helpers


def snapshot(
    w: SimWorld,
    ws: WorkspaceState | None = None,
    held_radius: float = 0.1,
    latched: tuple[str, str] | None = None,
) -> RobotSnapshot:
    """Proprioceptive robot state.  When the gripper first holds something,
    the held object is identified with the tracked entity nearest to it, if
    one lies within ``held_radius``; that identity (``latched``) is kept for
    as long as the same arm keeps holding."""
    r = w.robot
    ee = {a: tuple(float(c) for c in r.ee_world(a)) for a in ("LEFT", "RIGHT")}
    held = None
    if r.held is not None and latched is not None and latched[0] == r.held[0]:
        held = latched
    elif r.held is not None and ws is not None and ws.tracks:
        arm = r.held[0]
        p = np.asarray(ee[arm])
        ref = min(sorted(ws.tracks), key=lambda k: float(np.linalg.norm(ws.tracks[k].center - p)))
        if float(np.linalg.norm(ws.tracks[ref].center - p)) <= held_radius:
            held = (arm, ref)
    shoulders = {a: tuple(float(c) for c in BODY.shoulder_world(r.base, a)) for a in ("LEFT", "RIGHT")}
    return RobotSnapshot(tuple(r.base), ee, dict(r.gripper), held, r.stance_ok, shoulders)


def survey(
    w: SimWorld,
    spec: ScenarioSpec,
    noise: NoiseModel,
    rng: np.random.Generator,
    grounder: Grounder,
    cache: RenderCache,
    ticks: int = 5,
    radius: float = 0.05,
) -> tuple[SimWorld, WorkspaceState, dict[str, EntityLabel]]:
    """Look at the scene for a few ticks with every vocabulary phrase and
    register the entities that persist.

    Detections within ``radius`` of each other are one entity; an entity
    must be seen in at least half of the frames, which drops one-off
    spurious masks.  Each entity takes the phrase with the highest mean
    confidence over the frames that phrase detected it in (then the most
    detections), so a consistent low-confidence cross-match cannot outvote
    a true match that missed a few frames.  Refs are numbered per role by distance from the robot.
    """
    vocab = {v.phrase: v for v in spec.vocabulary}
    clusters: list[dict] = []
    for _ in range(ticks):
        obs = render_observation(w, list(vocab), noise, rng, cache)
        for phrase in vocab:
            for c in grounder.candidates(obs, phrase):
                best, best_d = None, radius
                for cl in clusters:
                    d = float(np.linalg.norm(cl["center"] - c.state.center))
                    if d <= best_d:
                        best, best_d = cl, d
                if best is None:
                    best = {"center": c.state.center.copy(), "n": 0, "frames": set(), "score": {}, "hits": {}, "last": {}}
                    clusters.append(best)
                best["n"] += 1
                best["center"] = best["center"] + (c.state.center - best["center"]) / best["n"]
                best["frames"].add(w.clock)
                best["score"][phrase] = best["score"].get(phrase, 0.0) + c.seg_conf
                best["hits"][phrase] = best["hits"].get(phrase, 0) + 1
                best["last"][phrase] = c
        w = step(w, ControlCommand())
    keep = [cl for cl in clusters if 2 * len(cl["frames"]) >= ticks]
    base = np.asarray(w.robot.base[:2])
    items = []
    for cl in keep:
        phrase = max(sorted(cl["score"]), key=lambda p: (round(cl["score"][p] / cl["hits"][p], 9), cl["hits"][p]))
        v = vocab[phrase]
        dist = float(np.linalg.norm(cl["center"][:2] - base))
        items.append((ROLE_ORDER.get(v.role, 9), round(dist, 6), phrase, cl, v))
    items.sort(key=lambda t: t[:3])
    counters: dict[str, int] = {}
    labels: dict[str, EntityLabel] = {}
    selections: dict[str, Candidate] = {}
    for _, _, phrase, cl, v in items:
        prefix = REF_PREFIX.get(v.role, "obj")
        counters[prefix] = counters.get(prefix, 0) + 1
        ref = f"{prefix}_{counters[prefix]}"
        labels[ref] = EntityLabel(phrase, v.category, v.role, v.accepts)
        selections[ref] = cl["last"][phrase]
    robot = snapshot(w)
    ws = update_workspace(WorkspaceState(0, {}, robot), selections, 1, robot, grounder.cfg)
    return w, ws, labels


# --------------------------------------------------------------------------
# Trial runner


def _workspace_payload(ws: WorkspaceState, refs: Sequence[str]) -> dict:
    out = {}
    for r in refs:
        t = ws.tracks.get(r)
        if t is not None:
            out[r] = {"center": t.center, "extent": t.extent, "q": t.confidence, "seen": t.seen, "unseen": t.frames_since_seen}
    return out


def _truth_payload(w: SimWorld) -> dict:
    return {
        "base": w.robot.base,
        "held": w.robot.holding(),
        "objects": {o.id: {"position": o.position, "support": o.support_of} for o in w.objects if o.renderable},
    }


def _untracked(report: SupervisorReport) -> bool:
    return any(f.error and f.error.startswith("untracked") for f in report.preconditions + report.success)


def _visible_failing(report: SupervisorReport) -> bool:
    for f in report.failing_preconditions():
        if f.label.startswith("VISIBLE") and (not f.instant or f.error):
            return True
    return False


class _Trial:
    def __init__(self, spec: ScenarioSpec, cfg: TrialConfig, verifier: Verifier | None = None, planner_client=None):
        self.spec, self.cfg = spec, cfg
        world = spawn_scenario(spec, cfg.seed)
        if cfg.stance_faults is not None:
            world = replace(world, stance_faults=tuple(tuple(f) for f in cfg.stance_faults))
        self.world = world
        self.noise = resolve_noise(spec, cfg.seed, cfg.noise)
        self.rng_obs = _seed_rng(cfg.seed, 2)
        self.cache = RenderCache()
        self.grounder = Grounder(cfg.grounding)
        self.coord = Coordinator(cfg.executor, _seed_rng(cfg.seed, 3))
        self.sup = Supervisor(cfg.supervisor, verifier, DT) if cfg.supervisor_enabled else None
        self.planner = make_planner(cfg.planner, planner_client)
        self.trace = TraceWriter()
        self.retry = RetryState()
        self.result = TrialResult(spec.name, cfg.seed, cfg.supervisor_enabled, False, 0, "time_limit", trace=self.trace)
        self.completed: list[int] = []
        self.blocked_run = 0
        self.uncertain_run = 0
        self.prev_measures: dict[str, float] = {}
        self.corrective: set[str] = set()
        self.anchors: dict[str, tuple[float, np.ndarray]] = {}  # (gate, last center) of re-grounded entities
        self.last_fault: str | None = None
        self.open_loop_start = 0
        self.finished = False

    # -- setup -------------------------------------------------------------
    def start(self) -> bool:
        cfg, spec = self.cfg, self.spec
        self.trace.emit(
            0,
            "trial",
            {
                "scenario": spec.name,
                "seed": cfg.seed,
                "supervisor_enabled": cfg.supervisor_enabled,
                "recovery_enabled": cfg.recovery_enabled,
                "planner": cfg.planner.kind,
                "noise": self.noise.to_dict(),
            },
        )
        self.world, self.ws, self.labels = survey(self.world, spec, self.noise, self.rng_obs, self.grounder, self.cache, cfg.survey_ticks)
        self.scene: SceneSummary = summarize_workspace(self.ws, self.labels)
        try:
            self.program = self.planner.plan(spec.instruction, self.scene)
        except PlannerError as exc:
            self.finish(self.world.clock, f"failed:planner:{exc}")
            return False
        self.trace.emit(self.world.clock, "plan", {"scene": self.scene.to_dict(), "program": program_to_dict(self.program)})
        self.idx = 0
        self.activate(self.world.clock)
        return True

    def phrases(self) -> dict[str, str]:
        out = {r: lab.phrase for r, lab in self.labels.items()}
        for s in self.program.subtasks:
            out.setdefault(s.target.ref, s.target.phrase)
            d = destination_ref(s)
            if d and s.destination.phrase:
                out.setdefault(d, s.destination.phrase)
        return out

    @property
    def subtask(self) -> Subtask:
        return self.program.subtasks[self.idx]

    def activate(self, tick: int, restart: bool = False, keep_histories: bool = False) -> None:
        s = self.subtask
        attempt = self.retry.start(s.name)
        self.retry.elapsed[s.name] = 0.0
        if self.sup is not None:
            if restart:
                if not keep_histories:
                    self.sup.reset_histories()
                self.sup.restart_clock(tick)
            else:
                self.sup.activate(s, tick)
        if not restart:
            self.coord.activate(s, tick)
        self.open_loop_start = tick
        self.blocked_run = self.uncertain_run = 0
        self.last_fault = None
        self.trace.emit(
            tick,
            "subtask",
            {"event": "restart" if restart else "start", "id": s.subtask_id, "name": s.name, "attempt": attempt, "max_retry": s.max_retry},
        )

    def finish(self, tick: int, outcome: str) -> None:
        self.finished = True
        r = self.result
        r.outcome = outcome
        r.ticks = tick
        r.success = (not outcome.startswith("failed")) and check_oracle(self.spec, self.world)
        self.trace.emit(tick, "result", {"success": r.success, "outcome": outcome, "recoveries": dict(sorted(r.recoveries.items())), "replans": r.replans})

    # -- per tick ------------------------------------------------------------
    def perceive(self, tick: int) -> None:
        s = self.subtask
        phrases = self.phrases()
        refs = [r for r in collect_entities(s).refs() if r != ROBOT_REF]
        prev = self.ws.robot
        robot = snapshot(self.world, self.ws, self.cfg.held_radius, prev.held)
        ws = self.ws
        if prev.held is not None and robot.held is not None and prev.held[1] == robot.held[1]:
            arm = robot.held[0]
            ws = ws.shifted(robot.held[1], np.asarray(robot.ee[arm]) - np.asarray(prev.ee[arm]))
        if robot.held is not None and robot.held[1] not in refs:
            refs.append(robot.held[1])
        queries = sorted({phrases[r] for r in refs if r in phrases})
        held_ref = robot.held[1] if robot.held is not None else None
        reqs = []
        for r in refs:
            if r not in phrases:
                continue
            if r == held_ref:
                gate, anchor = self.cfg.held_radius, np.asarray(robot.ee[robot.held[0]])
            elif r in self.anchors and r not in ws.tracks:
                gate, anchor = self.anchors[r]
            else:
                gate, anchor = None, None
            reqs.append(GroundingRequest(r, phrases[r], s.target if r == s.target.ref else None, gate, anchor))
        if queries:
            obs = render_observation(self.world, queries, self.noise, self.rng_obs, self.cache)
            ws = self.grounder.step(ws.with_robot(robot), obs, reqs, robot)
            counts = {q: len(obs.candidates.get(q, ())) for q in queries}
        else:
            ws = WorkspaceState(ws.tick + 1, ws.tracks, robot)
            counts = {}
        self.ws = ws
        self.trace.emit(tick, "observation_summary", {"queries": counts})
        self.trace.emit(tick, "workspace", {"robot": {"base": robot.base, "held": robot.held}, "tracks": _workspace_payload(ws, refs)})

    def advance(self, tick: int) -> bool:
        """Move past the active subtask; returns False when the program is done."""
        s = self.subtask
        self.completed.append(s.subtask_id)
        self.result.subtasks.append((s.name, "done"))
        self.trace.emit(tick, "subtask", {"event": "done", "id": s.subtask_id, "name": s.name})
        self.idx += 1
        if self.idx >= len(self.program.subtasks):
            return False
        self.activate(tick)
        return True

    def feedback(self, report: SupervisorReport, status: str) -> FeedbackRecord:
        s = self.subtask
        if status == "uncertain":
            failing: tuple[FailingPredicate, ...] = ()
        elif status == "failed" and (report.reason or "").startswith("safety"):
            failing = tuple(
                fp for fp in failing_set(s, self.sup.pre, (), "blocked") if PREDICATES[fp.key].invariant
            )
        else:
            failing = failing_set(s, self.sup.pre, self.sup.succ, status)
        reason = report.reason
        if reason is None and _untracked(report):
            reason = "untracked"
        if status == "uncertain":
            reason = ",".join(report.uncertain_reasons) or reason
        return build_feedback(s, status, failing, report.diagnostics, reason)

    def recover(self, tick: int, f: FeedbackRecord, status: str) -> bool:
        """Apply one recovery for ``status``; returns False when the trial
        must end as a failure."""
        s = self.subtask
        if not self.cfg.recovery_enabled:
            self.result.subtasks.append((s.name, status))
            self.finish(tick, f"failed:recovery_disabled:{status}")
            return False
        action = select_recovery(f, s.failure_handlers, self.retry, s.max_retry)
        if isinstance(action, RecoveryAction) and action.operator == "TASK_REVISION" and s.name in self.corrective:
            action = ESCALATE  # a corrective subtask that fails is not corrected again
        if action == ESCALATE:
            return self.escalate(tick, f)
        assert isinstance(action, RecoveryAction)
        self.result.recoveries[action.operator] = self.result.recoveries.get(action.operator, 0) + 1
        self.retry.last_operator[s.name] = action.operator
        self.trace.emit(tick, "recovery", {"subtask_id": s.subtask_id, **action.to_dict()})
        self.result.subtasks.append((s.name, status))
        op = action.operator
        if op == "RE_GROUND":
            for ref in action.param("refs", ()) or (s.target.ref,):
                t = self.ws.tracks.get(ref)
                if t is not None and not (t.mask is not None and touches_border(t.mask, self.world.head_camera())):
                    self.anchors[ref] = (self.cfg.reground_radius + float(np.max(t.extent)), t.center.copy())
                self.ws = self.ws.without(ref)
        if op == "ADAPT_PARAMS":
            self.coord.adapt(float(action.param("multiplier", 1.0)))
        if op == "TASK_REVISION":
            self.program, new = insert_subtask(self.program, s.subtask_id, action.param("template", "reposition"))
            self.corrective.add(new.name)
            self.trace.emit(tick, "plan", {"scene": self.scene.to_dict(), "program": program_to_dict(self.program), "edit": action.to_dict()})
            self.activate(tick)
            return True
        hold = self.cfg.reobserve_hold if op in ("RE_OBSERVE", "RE_GROUND") else 0
        self.coord.restart(tick, hold)
        self.activate(tick, restart=True, keep_histories=op == "RE_OBSERVE")
        return True

    def escalate(self, tick: int, f: FeedbackRecord) -> bool:
        s = self.subtask
        if self.result.replans >= self.cfg.max_replans:
            self.result.subtasks.append((s.name, "exhausted"))
            self.finish(tick, "failed:budget_exhausted")
            return False
        try:
            new = request_replan(self.planner, f, self.program, self.completed, workspace_refs(self.scene))
        except (PlannerError, PlanValidationError) as exc:
            self.finish(tick, f"failed:replan:{exc}")
            return False
        self.result.replans += 1
        self.result.subtasks.append((s.name, "replanned"))
        self.program = new
        self.trace.emit(tick, "plan", {"scene": self.scene.to_dict(), "program": program_to_dict(new), "replan": self.result.replans})
        self.idx = len(self.completed)
        self.activate(tick)
        return True

    def _band_moving(self, rep: SupervisorReport) -> bool:
        """True when every uncertain reason is a hysteresis-band reason whose
        measure changed by more than ``band_progress`` of its threshold since
        the previous tick: a measure sweeping through the band is progress,
        not noise."""
        s = self.subtask
        thresholds = {f"pre{i}": p.value for i, p in enumerate(s.preconditions)}
        thresholds.update({f"succ{i}": p.value for i, p in enumerate(s.success_conditions)})
        now = {f.id: f.measure for f in rep.preconditions + rep.success if f.measure is not None}
        prev, self.prev_measures = self.prev_measures, now
        if not rep.uncertain_reasons:
            return False
        for reason in rep.uncertain_reasons:
            kind, _, fid = reason.partition(":")
            if kind != "band" or fid not in prev or fid not in now:
                return False
            v = abs(float(thresholds[fid]))
            if abs(now[fid] - prev[fid]) <= self.cfg.band_progress * v:
                return False
        return True

    def supervise(self, tick: int) -> tuple[SupervisorReport | None, bool, bool]:
        """Returns (report, keep_running, recovered_this_tick)."""
        rep = self.sup.tick(self.ws, tick, self.last_fault)
        self.trace.emit(tick, "report", rep.to_dict())
        if rep.status == "done":
            return rep, self.advance(tick), False
        if rep.status == "blocked" and (_visible_failing(rep) or _untracked(rep)):
            self.blocked_run += 1
        else:
            self.blocked_run = 0
        moving = self._band_moving(rep)
        if rep.status == "in_progress" and rep.uncertain and not moving:
            self.uncertain_run += 1
        else:
            self.uncertain_run = 0
        # One feedback line per blocked/failed/uncertain report.  Failures
        # recover at once; persistent visibility blocks and uncertainty after
        # their patience; other blocks are left to the coordinator.
        status = rep.status if rep.status in ("blocked", "failed") else "uncertain" if rep.uncertain else None
        if status is None:
            if rep.reobserve:
                self.coord.restart(tick, self.cfg.reobserve_hold)
            return rep, True, False
        trigger = (
            status == "failed"
            or (status == "blocked" and self.blocked_run >= self.cfg.blocked_patience)
            or (status == "uncertain" and self.uncertain_run >= self.cfg.uncertain_patience)
        )
        f = self.feedback(rep, status)
        self.trace.emit(tick, "feedback", {**f.to_dict(), "triggered": trigger})
        if trigger:
            return rep, self.recover(tick, f, status), True
        if rep.reobserve:
            self.coord.restart(tick, self.cfg.reobserve_hold)
        return rep, True, False

    def run(self) -> TrialResult:
        if not self.start():
            return self.result
        limit = self.cfg.max_sim_time if self.cfg.max_sim_time is not None else self.spec.max_sim_time
        max_tick = int(round(limit / DT))
        while True:
            tick = self.world.clock
            if tick >= max_tick:
                self.finish(tick, "time_limit")
                break
            self.perceive(tick)
            s = self.subtask
            report = None
            if self.sup is not None:
                report, running, recovered = self.supervise(tick)
                if not running:
                    if not self.finished:
                        self.finish(tick, "program_done")
                    break
                if self.subtask is not s:
                    report = None  # a new subtask starts next tick
                    out_cmd, mode, entered, fault = ControlCommand(), Mode.IDLE, False, None
                elif recovered:
                    out_cmd, mode, entered, fault = ControlCommand(), Mode.PAUSED_FOR_RECOVERY, False, None
                else:
                    out = self.coord.tick(s, self.ws, self.world.robot, report, tick)
                    out_cmd, mode, entered, fault = out.command, out.mode, out.entered_manipulation, out.fault
            else:
                out = self.coord.tick(s, self.ws, self.world.robot, None, tick)
                out_cmd, mode, entered, fault = out.command, out.mode, out.entered_manipulation, out.fault
                if out.complete or (tick - self.open_loop_start) * DT >= s.timeout_sec:
                    status = "done" if out.complete else "timeout"
                    self.completed.append(s.subtask_id)
                    self.result.subtasks.append((s.name, status))
                    self.trace.emit(tick, "subtask", {"event": status, "id": s.subtask_id, "name": s.name})
                    self.idx += 1
                    if self.idx >= len(self.program.subtasks):
                        self.emit_command(tick, s, out_cmd, mode, entered, fault)
                        self.world = step(self.world, out_cmd)
                        self.finish(self.world.clock, "program_done")
                        break
                    self.activate(tick)
            self.last_fault = fault
            self.emit_command(tick, s, out_cmd, mode, entered, fault)
            self.world = step(self.world, out_cmd)
            if self.cfg.record_truth:
                self.trace.emit(tick, "world_truth", _truth_payload(self.world))
            if check_oracle(self.spec, self.world):
                self.finish(self.world.clock, "oracle")
                break
        return self.result

    def emit_command(self, tick: int, s: Subtask, cmd: ControlCommand, mode: str, entered: bool, fault: str | None) -> None:
        self.trace.emit(tick, "command", {"subtask_id": s.subtask_id, "mode": mode, "entered_manipulation": entered, "fault": fault, **cmd.to_dict()})


def run_trial(
    scenario: ScenarioSpec | str,
    cfg: TrialConfig = TrialConfig(),
    trace_dir: str | Path | None = None,
    verifier: Verifier | None = None,
    planner_client=None,
) -> TrialResult:
    """One seeded trial.  Failures are outcomes, not exceptions; success is
    decided by the scenario's ground-truth oracle alone."""
    spec = load_scenario(scenario) if isinstance(scenario, str) else scenario
    trial = _Trial(spec, cfg, verifier, planner_client)
    result = trial.run()
    if trace_dir is not None:
        tag = "sup" if cfg.supervisor_enabled else "nosup"
        path = Path(trace_dir) / f"{spec.name}_seed{cfg.seed}_{tag}.jsonl"
        try:
            result.trace_path = str(trial.trace.write(path))
        except OSError as exc:
            result.success, result.outcome = False, f"failed:trace_io:{exc}"
    return result


@dataclass
class SuccessTable:
    scenario: str
    n_trials: int
    counts: dict[str, int]
    results: dict[str, list[TrialResult]] = field(repr=False, default_factory=dict)

    def cell(self, column: str) -> str:
        return f"{self.counts[column]}/{self.n_trials}"

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "n_trials": self.n_trials, "counts": dict(self.counts), "table": {c: self.cell(c) for c in self.counts}}

    def text(self) -> str:
        cols = list(self.counts)
        head = "scenario".ljust(20) + "".join(c.rjust(20) for c in cols)
        row = self.scenario.ljust(20) + "".join(self.cell(c).rjust(20) for c in cols)
        return head + "\n" + row


def run_suite(
    scenario: ScenarioSpec | str,
    n_trials: int,
    cfg: TrialConfig = TrialConfig(),
    ablation: bool = False,
    trace_dir: str | Path | None = None,
    first_seed: int = 0,
) -> SuccessTable:
    """Seeds ``first_seed .. first_seed+n-1`` under ``cfg``; with ``ablation``
    both supervisor settings are run side by side on the same seeds."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    spec = load_scenario(scenario) if isinstance(scenario, str) else scenario
    settings = [("with_supervisor", True), ("without_supervisor", False)] if ablation else [
        ("with_supervisor" if cfg.supervisor_enabled else "without_supervisor", cfg.supervisor_enabled)
    ]
    counts: dict[str, int] = {}
    results: dict[str, list[TrialResult]] = {}
    for col, enabled in settings:
        rs = [run_trial(spec, replace(cfg, seed=first_seed + k, supervisor_enabled=enabled), trace_dir) for k in range(n_trials)]
        results[col] = rs
        counts[col] = sum(r.success for r in rs)
    return SuccessTable(spec.name, n_trials, counts, results)
