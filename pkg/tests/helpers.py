"""Small builders for hand-made workspace states and subtasks."""

from __future__ import annotations

import numpy as np

from taskloop.grounding import EntityTrack, GeometricState, RobotSnapshot, WorkspaceState
from taskloop.program import (
    Action,
    Arm,
    DestinationSpec,
    EntitySpec,
    ManipulationSpec,
    PredicateAssertion,
    Subtask,
    SubtaskType,
)

ROBOT = RobotSnapshot(
    (0.0, 0.0, 0.0),
    {"RIGHT": (0.3, -0.2, 0.9), "LEFT": (0.3, 0.2, 0.9)},
    {"RIGHT": "open", "LEFT": "open"},
    shoulders={"RIGHT": (0.0, -0.2, 1.0), "LEFT": (0.0, 0.2, 1.0)},
)
TABLE = ((0.8, 0.0, 0.36), (0.35, 0.6, 0.36))


def track(ref, center, half, q=0.9, seen=True, fss=0, axis=(1.0, 0.0, 0.0)) -> EntityTrack:
    c = np.asarray(center, dtype=float)
    s = GeometricState(c, np.asarray(half, dtype=float), q, np.asarray(axis, dtype=float), 200, c)
    return EntityTrack(ref, s, c, c, np.asarray(half, dtype=float), fss, 0.5, seen)


def ws_with(*tracks, robot=ROBOT, tick=0) -> WorkspaceState:
    return WorkspaceState(tick, {t.ref: t for t in tracks}, robot)


def cup_on_table(gap=0.0, q=0.9, seen=True, xy=(0.7, 0.0)) -> WorkspaceState:
    table = track("table_1", *TABLE)
    cup = track("obj_1", (xy[0], xy[1], 0.72 + 0.05 + gap), (0.03, 0.03, 0.05), q=q, seen=seen)
    return ws_with(table, cup)


def pred(key, op="==", value=True, n=1, **args) -> PredicateAssertion:
    return PredicateAssertion(key, tuple(args.items()), op, value, n)


VISIBLE = pred("VISIBLE", n=3, object="obj_1")
ON_TABLE = pred("SUPPORTED_BY", n=10, object="obj_1", support="table_1")


def subtask(pre=(VISIBLE,), succ=(ON_TABLE,), timeout=30.0) -> Subtask:
    return Subtask(
        1,
        SubtaskType.MANIPULATION,
        "subtask_1",
        EntitySpec("obj_1", "cup"),
        DestinationSpec("container"),
        ManipulationSpec(Arm.RIGHT, Action.PLACE, True),
        None,
        tuple(pre),
        tuple(succ),
        (),
        timeout,
        2,
    )
