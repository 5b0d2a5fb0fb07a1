"""Execution layer: gait-conditioned locomotion primitives, feasibility-checked
end-effector trajectories and the coordinator that switches between them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .geometry import wrap_angle, yaw_rotate
from .grounding import Handle, WorkspaceState, make_handle
from .program import Action, Primitive, Subtask, SubtaskType
from .sim import BODY, ControlCommand, RobotState, VelocityCommand

__all__ = [
    "CAPS",
    "Coordinator",
    "CoordinatorState",
    "ExecutorConfig",
    "GAIT_TABLE",
    "Infeasible",
    "Mode",
    "Trajectory",
    "VelocityCaps",
    "arm_trajectory",
    "clamp_to_caps",
    "gait_for",
    "gait_table_document",
    "locomotion_command",
    "locomotion_step",
    "validate_gait_id",
    "within_caps",
]

GAIT_TABLE: dict[Primitive, tuple[int, ...]] = {
    Primitive.FORWARD_WALK: (0, 1),
    Primitive.BACKWARD_WALK: (2, 3),
    Primitive.CARRY_AND_WALK: (4, 5),
    Primitive.RUN: (6, 7),
    Primitive.SIDE_WALK: (8, 9),
    Primitive.TURN_LEFT: (10,),
    Primitive.TURN_RIGHT: (11,),
}


def validate_gait_id(g: int) -> int:
    if isinstance(g, bool) or not isinstance(g, (int, np.integer)) or not 0 <= int(g) <= 11:
        raise ValueError(f"gait id must be an integer in [0, 11], got {g!r}")
    return int(g)


def gait_for(p: Primitive, rng: np.random.Generator | None = None, canonical: bool = False) -> int:
    """Clip-level gait id for a primitive; multi-clip groups are sampled
    uniformly unless ``canonical`` picks the first clip."""
    group = GAIT_TABLE[Primitive(p)]
    if canonical or len(group) == 1 or rng is None:
        return group[0]
    return group[int(rng.integers(len(group)))]


def gait_table_document() -> dict:
    return {p.value: list(g) for p, g in GAIT_TABLE.items()}


@dataclass(frozen=True)
class VelocityCaps:
    forward: tuple[float, float]
    lateral: float
    yaw: tuple[float, float]


CAPS: dict[Primitive, VelocityCaps] = {
    Primitive.FORWARD_WALK: VelocityCaps((-0.15, 0.8), 0.15, (-1.0, 1.0)),
    Primitive.BACKWARD_WALK: VelocityCaps((-0.4, 0.05), 0.15, (-1.0, 1.0)),
    Primitive.CARRY_AND_WALK: VelocityCaps((-0.15, 0.4), 0.15, (-1.0, 1.0)),
    Primitive.RUN: VelocityCaps((0.0, 1.6), 0.15, (-1.0, 1.0)),
    Primitive.SIDE_WALK: VelocityCaps((-0.1, 0.1), 0.4, (-0.5, 0.5)),
    Primitive.TURN_LEFT: VelocityCaps((0.0, 0.0), 0.0, (0.0, 1.0)),
    Primitive.TURN_RIGHT: VelocityCaps((0.0, 0.0), 0.0, (-1.0, 0.0)),
}


def clamp_to_caps(v: VelocityCommand, p: Primitive) -> VelocityCommand:
    c = CAPS[p]
    return VelocityCommand(
        float(np.clip(v.forward, *c.forward)),
        float(np.clip(v.lateral, -c.lateral, c.lateral)),
        float(np.clip(v.yaw_rate, *c.yaw)),
    )


def within_caps(v: VelocityCommand, p: Primitive, tol: float = 1e-9) -> bool:
    c = CAPS[p]
    return (
        c.forward[0] - tol <= v.forward <= c.forward[1] + tol
        and abs(v.lateral) <= c.lateral + tol
        and c.yaw[0] - tol <= v.yaw_rate <= c.yaw[1] + tol
    )


@dataclass(frozen=True)
class ExecutorConfig:
    standoff: float = 0.55
    pos_tol: float = 0.05
    yaw_tol: float = 0.1
    k_lin: float = 1.5
    k_yaw: float = 2.0
    turn_first: float = 0.6  # heading error (rad) above which walking primitives turn in place
    waypoint_step: float = 0.05
    mpc_step: float = 0.03
    reach: float = 0.85
    lift: float = 0.08
    place_clearance: float = 0.02
    handover_height: float = 1.0
    handover_offset: float = 0.35
    stall_ticks: int = 60
    search_center_tol: float = 0.35
    face_tol: float = 0.35  # arm motions start only once the goal is within this bearing
    canonical_gait: bool = False


# --------------------------------------------------------------------------
# Locomotion


def _goal_from_entity(base, target_xy, standoff: float) -> tuple[float, float, float]:
    dx, dy = target_xy[0] - base[0], target_xy[1] - base[1]
    d = math.hypot(dx, dy)
    if d < 1e-9:
        return base[0], base[1], base[2]
    ux, uy = dx / d, dy / d
    return target_xy[0] - standoff * ux, target_xy[1] - standoff * uy, math.atan2(dy, dx)


def locomotion_command(base: tuple[float, float, float], goal: tuple[float, float, float | None], p: Primitive, cfg: ExecutorConfig = ExecutorConfig()) -> tuple[VelocityCommand, bool]:
    """Proportional controller toward a pose goal, clamped to the primitive's
    caps.  Returns the command and whether the goal tolerance is met."""
    x, y, yaw = base
    gx, gy, gyaw = goal
    ex, ey = gx - x, gy - y
    dist = math.hypot(ex, ey)
    if p in (Primitive.TURN_LEFT, Primitive.TURN_RIGHT):
        want = gyaw if gyaw is not None else math.atan2(ey, ex)
        err = wrap_angle(want - yaw)
        if p is Primitive.TURN_LEFT and err < 0:
            err += 2 * math.pi
        if p is Primitive.TURN_RIGHT and err > 0:
            err -= 2 * math.pi
        v = clamp_to_caps(VelocityCommand(0.0, 0.0, cfg.k_yaw * err), p)
        return v, abs(wrap_angle(want - yaw)) <= cfg.yaw_tol
    fwd, lat = yaw_rotate(ex, ey, -yaw)
    if dist > cfg.pos_tol:
        heading = math.atan2(ey, ex)
        if p is Primitive.BACKWARD_WALK:
            heading = wrap_angle(heading + math.pi)
        if dist < 0.3 and gyaw is not None:
            heading = gyaw
        herr = wrap_angle(heading - yaw)
        if dist >= 0.3 and abs(herr) > cfg.turn_first and p is not Primitive.SIDE_WALK:
            v = VelocityCommand(0.0, 0.0, cfg.k_yaw * herr)
        else:
            v = VelocityCommand(cfg.k_lin * fwd, cfg.k_lin * lat, cfg.k_yaw * herr)
        return clamp_to_caps(v, p), False
    if gyaw is None:
        return VelocityCommand(), True
    herr = wrap_angle(gyaw - yaw)
    v = clamp_to_caps(VelocityCommand(cfg.k_lin * fwd, cfg.k_lin * lat, cfg.k_yaw * herr), p)
    return v, abs(herr) <= cfg.yaw_tol


def effective_primitive(p: Primitive, holding: bool) -> Primitive:
    walking = (Primitive.FORWARD_WALK, Primitive.BACKWARD_WALK, Primitive.RUN, Primitive.SIDE_WALK)
    return Primitive.CARRY_AND_WALK if holding and p in walking else p


def locomotion_step(rs: RobotState, goal: tuple[float, float, float | None], p: Primitive, dt: float, cfg: ExecutorConfig = ExecutorConfig()) -> tuple[RobotState, VelocityCommand, Primitive, bool]:
    """One kinematic locomotion tick: command toward ``goal`` and integrate
    the base.  Holding an object forces CARRY_AND_WALK."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = effective_primitive(Primitive(p), rs.held is not None)
    v, reached = locomotion_command(rs.base, goal, p, cfg)
    x, y, yaw = rs.base
    dx, dy = yaw_rotate(v.forward, v.lateral, yaw)
    base = (x + dx * dt, y + dy * dt, yaw + v.yaw_rate * dt)
    return replace(rs, base=base, cmd_echo=(v.forward, v.lateral, v.yaw_rate)), v, p, reached


# --------------------------------------------------------------------------
# Arm trajectories


class Infeasible(Exception):
    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind  # "reach" | "balance"


@dataclass(frozen=True)
class Trajectory:
    arm: str
    waypoints: tuple[tuple[tuple[float, float, float], str | None], ...]  # (position, gripper command)
    reach_ok: bool
    balance_ok: bool
    max_step: float

    @property
    def end(self) -> np.ndarray:
        return np.asarray(self.waypoints[-1][0])


def _shoulder(base, arm: str) -> np.ndarray:
    return BODY.shoulder_world(base, arm)


def action_target(action: Action, h: Handle, dest: Handle | None = None, held_half_height: float | None = None, cfg: ExecutorConfig = ExecutorConfig()) -> np.ndarray:
    """End-effector goal for an action: the handle centre for grasping and
    reaching, or the destination top plus half the held object's height plus
    a clearance for placing."""
    if action in (Action.GRASP, Action.REACH):
        return np.asarray(h.center, dtype=float)
    if action is Action.PLACE:
        if dest is None:
            raise ValueError("PLACE needs a destination handle")
        hh = float(h.extent[2]) if held_half_height is None else held_half_height
        c = np.asarray(dest.center, dtype=float)
        return np.array([c[0], c[1], dest.top + hh + cfg.place_clearance])
    raise ValueError(f"no geometric target for {action}")


def arm_trajectory(
    rs: RobotState,
    arm: str,
    target: np.ndarray,
    mpc_enabled: bool,
    cfg: ExecutorConfig = ExecutorConfig(),
    gripper_at_end: str | None = None,
    start: np.ndarray | None = None,
) -> Trajectory:
    """Straight-line waypoints from the current end effector to ``target``.

    Spacing is at most 0.05 m (0.03 m with the smoothness constraint of the
    upper-body MPC flag).  Raises :class:`Infeasible` if any waypoint leaves
    the reach sphere or the stance is not stable.
    """
    if not rs.stance_ok:
        raise Infeasible("balance", "stance not stable")
    p0 = rs.ee_world(arm) if start is None else np.asarray(start, dtype=float)
    p1 = np.asarray(target, dtype=float)
    step = cfg.mpc_step if mpc_enabled else cfg.waypoint_step
    n = max(1, math.ceil(float(np.linalg.norm(p1 - p0)) / step - 1e-9))
    sh = _shoulder(rs.base, arm)
    wps = []
    for k in range(1, n + 1):
        p = p0 + (p1 - p0) * (k / n)
        if float(np.linalg.norm(p - sh)) > cfg.reach + 1e-9:
            raise Infeasible("reach", f"waypoint {k} at {np.linalg.norm(p - sh):.3f} m from shoulder")
        wps.append(((float(p[0]), float(p[1]), float(p[2])), gripper_at_end if k == n else None))
    return Trajectory(arm, tuple(wps), True, True, step)


# --------------------------------------------------------------------------
# Coordinator


class Mode:
    IDLE = "IDLE"
    LOCOMOTING = "LOCOMOTING"
    MANIPULATING = "MANIPULATING"
    PAUSED_FOR_RECOVERY = "PAUSED_FOR_RECOVERY"


@dataclass
class CoordinatorState:
    mode: str = Mode.IDLE
    subtask_id: int | None = None
    primitive: Primitive | None = None
    gait_id: int | None = None
    phase: str = "start"
    trajectory: Trajectory | None = None
    wp_index: int = 0
    complete: bool = False  # executor-side completion signal
    complete_tick: int | None = None
    hold: int = 0
    slot: tuple[float, float, float] | None = None
    fault: str | None = None
    param_scale: float = 1.0
    notes: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class TickOutput:
    command: ControlCommand
    mode: str
    entered_manipulation: bool
    complete: bool
    fault: str | None
    trajectory: Trajectory | None = None


class Coordinator:
    """Turns the active subtask plus the latest report into commands.

    With ``report=None`` (supervisor disabled) the coordinator runs open
    loop: it acts as soon as it has a handle and signals completion from
    its own primitive state.
    """

    def __init__(self, cfg: ExecutorConfig = ExecutorConfig(), rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state = CoordinatorState()

    # -- lifecycle -------------------------------------------------------
    def activate(self, subtask: Subtask, tick: int) -> None:
        scale = self.state.param_scale if self.state.subtask_id == subtask.subtask_id else 1.0
        self.state = CoordinatorState(subtask_id=subtask.subtask_id, param_scale=scale)

    def pause(self) -> None:
        self.state.mode = Mode.PAUSED_FOR_RECOVERY
        self.state.trajectory = None

    def restart(self, tick: int, hold: int = 0) -> None:
        """Restart the active subtask body (after a recovery operator)."""
        scale = self.state.param_scale
        sid = self.state.subtask_id
        self.state = CoordinatorState(subtask_id=sid, param_scale=scale, hold=hold)

    def adapt(self, multiplier: float) -> None:
        self.state.param_scale = float(np.clip(self.state.param_scale * multiplier, 0.5, 2.0))

    # -- helpers ---------------------------------------------------------
    def _set_primitive(self, p: Primitive | None) -> None:
        if p != self.state.primitive:
            self.state.primitive = p
            self.state.gait_id = None if p is None else gait_for(p, self.rng, self.cfg.canonical_gait)

    def _zero(self) -> ControlCommand:
        self._set_primitive(None)
        return ControlCommand()

    def _handle(self, ws: WorkspaceState, ref: str | None) -> Handle | None:
        if ref is None or ref not in ws.tracks:
            return None
        return make_handle(ws, ref)

    def _loco(self, rs: RobotState, goal, primitive: Primitive) -> tuple[ControlCommand, bool]:
        p = effective_primitive(primitive, rs.held is not None)
        v, reached = locomotion_command(rs.base, goal, p, self.cfg)
        self._set_primitive(p)
        return ControlCommand(base=v, gait_id=self.state.gait_id, primitive=p.value), reached

    def _reposition_goal(self, rs: RobotState, point: np.ndarray) -> tuple[float, float, float]:
        return _goal_from_entity(rs.base, point[:2], self.cfg.standoff * self.state.param_scale)

    # -- main entry --------------------------------------------------------
    def tick(self, subtask: Subtask, ws: WorkspaceState, rs: RobotState, report=None, tick: int = 0) -> TickOutput:
        st = self.state
        entered = False
        if report is not None and report.status == "failed":
            self.pause()
            return TickOutput(self._zero(), st.mode, False, st.complete, st.fault)
        if report is not None and report.status == "done":
            st.mode = Mode.IDLE
            return TickOutput(self._zero(), st.mode, False, True, None)
        if st.mode == Mode.PAUSED_FOR_RECOVERY:
            return TickOutput(self._zero(), st.mode, False, st.complete, st.fault)
        if st.hold > 0:
            st.hold -= 1
            return TickOutput(self._zero(), st.mode, False, st.complete, None)

        if subtask.type is SubtaskType.LOCOMOTION:
            cmd = self._locomotion_subtask(subtask, ws, rs, report)
        else:
            cmd, entered = self._manipulation_subtask(subtask, ws, rs, report, tick)
        if st.complete and st.complete_tick is None:
            st.complete_tick = tick
        fault = None
        if report is not None and st.complete and st.complete_tick is not None and tick - st.complete_tick > self.cfg.stall_ticks:
            fault = "stalled"
        st.fault = fault
        return TickOutput(cmd, st.mode, entered, st.complete, fault, st.trajectory)

    # -- locomotion subtasks ---------------------------------------------
    def _locomotion_subtask(self, s: Subtask, ws: WorkspaceState, rs: RobotState, report) -> ControlCommand:
        st = self.state
        loco = s.locomotion
        assert loco is not None
        if report is not None and report.status == "blocked":
            st.mode = Mode.IDLE
            return self._zero()
        st.mode = Mode.LOCOMOTING
        if loco.primitive in (Primitive.TURN_LEFT, Primitive.TURN_RIGHT):
            return self._search(s, ws, rs)
        if loco.goal_pose is not None:
            goal = loco.goal_pose
        else:
            h = self._handle(ws, loco.goal_ref)
            if h is None:
                return self._zero()
            standoff = (loco.standoff if loco.standoff is not None else self.cfg.standoff) * st.param_scale
            goal = _goal_from_entity(rs.base, h.center[:2], standoff)
        cmd, reached = self._loco(rs, goal, loco.primitive)
        if reached:
            st.complete = True
            return self._zero()
        return cmd

    def _search(self, s: Subtask, ws: WorkspaceState, rs: RobotState) -> ControlCommand:
        st = self.state
        p = s.locomotion.primitive
        t = ws.tracks.get(s.locomotion.goal_ref) if s.locomotion.goal_ref else None
        if t is not None and t.seen:
            bearing = math.atan2(t.center[1] - rs.base[1], t.center[0] - rs.base[0])
            err = wrap_angle(bearing - rs.base[2])
            if abs(err) <= self.cfg.search_center_tol:
                st.complete = True
                return self._zero()
        sign = 1.0 if p is Primitive.TURN_LEFT else -1.0
        v = clamp_to_caps(VelocityCommand(0.0, 0.0, sign * 1.0), p)
        self._set_primitive(p)
        return ControlCommand(base=v, gait_id=st.gait_id, primitive=p.value)

    # -- manipulation subtasks -------------------------------------------
    def _manipulation_subtask(self, s: Subtask, ws: WorkspaceState, rs: RobotState, report, tick: int) -> tuple[ControlCommand, bool]:
        st = self.state
        m = s.manipulation
        assert m is not None
        arm = m.arm.value
        target = self._handle(ws, s.target.ref)
        if st.mode != Mode.MANIPULATING:
            if report is not None and not report.ready:
                return self._pre_engagement(s, ws, rs, report, target), False
            if report is None and target is None and m.action not in (Action.RELEASE,):
                st.mode = Mode.IDLE
                return self._zero(), False
            if report is None and target is not None and not rs.held and m.action in (Action.GRASP, Action.PLACE, Action.REACH):
                # open loop: walk into reach first
                sh = _shoulder(rs.base, arm)
                if float(np.linalg.norm(sh - target.center)) > self.cfg.reach:
                    st.mode = Mode.LOCOMOTING
                    cmd, _ = self._loco(rs, self._reposition_goal(rs, target.center), Primitive.FORWARD_WALK)
                    return cmd, False
            st.mode = Mode.MANIPULATING
            entered = True
        else:
            entered = False
        cmd = self._run_action(s, ws, rs, target, report)
        return cmd, entered

    def _pre_engagement(self, s: Subtask, ws, rs: RobotState, report, target: Handle | None) -> ControlCommand:
        st = self.state
        failing = {f.label.split("(")[0] for f in report.failing_preconditions()}
        if report.status == "blocked" and failing & {"REACHABLE", "NEAR"} and target is not None:
            st.mode = Mode.LOCOMOTING
            cmd, reached = self._loco(rs, self._reposition_goal(rs, target.center), Primitive.FORWARD_WALK)
            return self._zero() if reached else cmd
        st.mode = Mode.IDLE
        return self._zero()

    def _face(self, rs: RobotState, point: np.ndarray) -> ControlCommand | None:
        """Turn in place toward ``point`` so it stays in the camera's view;
        ``None`` once it is within the facing tolerance."""
        bearing = math.atan2(point[1] - rs.base[1], point[0] - rs.base[0])
        err = wrap_angle(bearing - rs.base[2])
        if abs(err) <= self.cfg.face_tol:
            return None
        p = effective_primitive(Primitive.FORWARD_WALK, rs.held is not None)
        self._set_primitive(p)
        v = clamp_to_caps(VelocityCommand(0.0, 0.0, self.cfg.k_yaw * err), p)
        return ControlCommand(base=v, gait_id=self.state.gait_id, primitive=p.value)

    def _follow(self, rs: RobotState, arm: str, target: np.ndarray, mpc: bool, gripper_at_end: str | None = None) -> tuple[ControlCommand | None, bool]:
        """Advance along a straight-line trajectory to ``target``, replanning
        when the target moves.  Returns (command, arrived)."""
        st = self.state
        tr = st.trajectory
        if tr is None or float(np.linalg.norm(tr.end - target)) > 0.02:
            tr = arm_trajectory(rs, arm, target, mpc, self.cfg, gripper_at_end)
            st.trajectory, st.wp_index = tr, 0
        if st.wp_index >= len(tr.waypoints):
            return None, True
        pos, g = tr.waypoints[st.wp_index]
        st.wp_index += 1
        grip = {arm: g} if g else {}
        return ControlCommand(arm_targets={arm: pos}, gripper=grip), st.wp_index >= len(tr.waypoints)

    def _run_action(self, s: Subtask, ws: WorkspaceState, rs: RobotState, target: Handle | None, report) -> ControlCommand:
        st = self.state
        m = s.manipulation
        arm = m.arm.value
        mpc = m.use_upper_body_mpc
        act = m.action
        holding = rs.holding(arm)
        try:
            if act is Action.RELEASE:
                if rs.gripper[arm] == "closed":
                    return ControlCommand(gripper={arm: "open"})
                st.complete = True
                return self._zero()
            if act is Action.REACH:
                if target is None:
                    return self._zero()
                cmd, arrived = self._follow(rs, arm, action_target(act, target, cfg=self.cfg), mpc)
                st.complete = st.complete or arrived
                return cmd or self._zero()
            if act is Action.GRASP:
                return self._grasp_phases(rs, arm, target, mpc, finish=True)
            if act in (Action.PLACE, Action.HANDOVER):
                if st.phase == "start" and holding:
                    st.phase = "transfer"
                if st.phase in ("start", "approach", "lift"):
                    return self._grasp_phases(rs, arm, target, mpc, finish=False)
                return self._place_phases(s, ws, rs, arm, target, mpc)
        except Infeasible as exc:
            st.trajectory = None
            st.notes["infeasible"] = exc.kind
            if exc.kind == "reach":
                # step the base toward the point the arm could not reach, then retry
                pt = st.notes.get("reach_point")
                if pt is None:
                    pt = target.center if target is not None else rs.ee_world(arm)
                cmd, _ = self._loco(rs, self._reposition_goal(rs, np.asarray(pt)), Primitive.FORWARD_WALK)
                return cmd
            return self._zero()
        return self._zero()

    def _grasp_phases(self, rs: RobotState, arm: str, target: Handle | None, mpc: bool, finish: bool) -> ControlCommand:
        st = self.state
        if st.phase == "start":
            if rs.gripper[arm] == "closed" and rs.holding(arm) is None:
                return ControlCommand(gripper={arm: "open"})
            if finish and rs.holding(arm) is not None:
                st.phase, st.complete = "hold", True
                return self._zero()
            st.phase = "approach"
            st.trajectory = None
        if st.phase == "approach":
            if target is None:
                return self._zero()
            goal = action_target(Action.GRASP, target, cfg=self.cfg)
            st.notes["reach_point"] = goal
            if st.trajectory is None:
                turn = self._face(rs, goal)
                if turn is not None:
                    return turn
            cmd, arrived = self._follow(rs, arm, goal, mpc, gripper_at_end="close")
            if arrived:
                st.phase = "lift"
                st.trajectory = None
                st.notes["lift_from"] = tuple(cmd.arm_targets[arm]) if cmd is not None else tuple(rs.ee_world(arm))
            return cmd or self._zero()
        if st.phase == "lift":
            start = np.asarray(st.notes.get("lift_from", rs.ee_world(arm)))
            goal = start + np.array([0.0, 0.0, self.cfg.lift])
            cmd, arrived = self._follow(rs, arm, goal, mpc)
            if arrived:
                st.trajectory = None
                if finish:
                    st.phase = "hold"
                    st.complete = True
                else:
                    st.phase = "transfer"
            return cmd or self._zero()
        if st.phase == "hold":
            return self._zero()
        return self._zero()

    def _slot(self, s: Subtask, ws: WorkspaceState, rs: RobotState, arm: str, target: Handle | None) -> np.ndarray | None:
        st = self.state
        m = s.manipulation
        dest_ref = s.destination.ref or f"dest_{s.subtask_id}"
        dest = self._handle(ws, dest_ref)
        if dest is None:
            return None
        hh = float(target.extent[2]) if target is not None else 0.05
        if m.action is Action.HANDOVER:
            c = np.asarray(dest.center, dtype=float)
            d = np.asarray(rs.base[:2]) - c[:2]
            n = float(np.linalg.norm(d))
            u = d / n if n > 1e-9 else np.array([1.0, 0.0])
            xy = c[:2] + self.cfg.handover_offset * u
            return np.array([xy[0], xy[1], self.cfg.handover_height])
        if st.slot is not None:
            return np.asarray(st.slot)
        others = []
        for r, t in ws.tracks.items():
            if r in (dest_ref, s.target.ref) or t.extent[2] > 0.3:
                continue
            if abs(t.center[0] - dest.center[0]) <= dest.extent[0] and abs(t.center[1] - dest.center[1]) <= dest.extent[1]:
                others.append(t.center[:2])
        half = np.asarray(target.extent[:2]) if target is not None else np.array([0.03, 0.03])
        margin = float(np.max(half)) + 0.02
        hx = max(0.0, float(dest.extent[0]) - margin)
        hy = max(0.0, float(dest.extent[1]) - margin)
        sh = _shoulder(rs.base, arm)
        best, best_key = None, None
        for fx in (-1.0, 0.0, 1.0):
            for fy in (-1.0, 0.0, 1.0):
                p = np.array([dest.center[0] + fx * hx, dest.center[1] + fy * hy])
                clear = min((float(np.linalg.norm(p - o)) for o in others), default=1.0)
                key = (-min(clear, 0.12), float(np.linalg.norm(np.append(p, 0.0) - np.append(sh[:2], 0.0))))
                if best_key is None or key < best_key:
                    best, best_key = p, key
        z = dest.top + hh + self.cfg.place_clearance
        st.slot = (float(best[0]), float(best[1]), float(z))
        return np.asarray(st.slot)

    def _place_phases(self, s: Subtask, ws: WorkspaceState, rs: RobotState, arm: str, target: Handle | None, mpc: bool) -> ControlCommand:
        st = self.state
        if st.phase == "transfer":
            slot = self._slot(s, ws, rs, arm, target)
            if slot is None:
                return self._zero()
            above = slot + np.array([0.0, 0.0, self.cfg.lift])
            st.notes["reach_point"] = above
            if st.trajectory is None:
                turn = self._face(rs, above)
                if turn is not None:
                    return turn
            cmd, arrived = self._follow(rs, arm, above, mpc)
            if arrived:
                st.phase = "descend"
                st.trajectory = None
            return cmd or self._zero()
        if st.phase == "descend":
            slot = np.asarray(st.slot) if st.slot is not None else self._slot(s, ws, rs, arm, target)
            cmd, arrived = self._follow(rs, arm, slot, mpc, gripper_at_end="open")
            if arrived:
                st.phase = "retract"
                st.trajectory = None
                st.notes["retract_from"] = tuple(slot)
            return cmd or self._zero()
        if st.phase == "retract":
            start = np.asarray(st.notes.get("retract_from", rs.ee_world(arm)))
            home = BODY.to_world(rs.base, BODY.ee_home[arm])
            goal = np.array([start[0], start[1], max(start[2] + 0.1, home[2])])
            cmd, arrived = self._follow(rs, arm, goal, mpc)
            if arrived:
                st.phase = "hold"
                st.complete = True
                st.trajectory = None
            return cmd or self._zero()
        return self._zero()
