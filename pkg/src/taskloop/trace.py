"""JSONL trial traces and a replay validator for per-tick invariants."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .executor import GAIT_TABLE, within_caps
from .program import PREDICATES, Primitive
from .sim import VelocityCommand

__all__ = ["KINDS", "TraceError", "TraceWriter", "read_trace", "validate_trace"]

KINDS = (
    "trial",
    "plan",
    "subtask",
    "observation_summary",
    "workspace",
    "report",
    "feedback",
    "recovery",
    "command",
    "world_truth",
    "result",
)


class TraceError(ValueError):
    pass


def _plain(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return round(float(x), 6)
    return x


@dataclass
class TraceWriter:
    """Accumulates trace lines in tick order; optionally flushed to a file."""

    lines: list[str] = field(default_factory=list)
    last_tick: int = 0

    def emit(self, tick: int, kind: str, payload: Mapping[str, Any]) -> None:
        if kind not in KINDS:
            raise TraceError(f"unknown trace kind {kind!r}")
        if tick < self.last_tick:
            raise TraceError(f"tick {tick} precedes {self.last_tick}")
        self.last_tick = tick
        self.lines.append(json.dumps({"tick": int(tick), "kind": kind, "payload": _plain(payload)}, separators=(",", ":"), allow_nan=False))

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def write(self, path: str | Path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.text(), encoding="utf-8")
        return p


def read_trace(source: str | Path | Iterable[str]) -> list[dict]:
    if isinstance(source, (str, Path)) and Path(source).exists():
        source = Path(source).read_text(encoding="utf-8").splitlines()
    return [json.loads(line) for line in source if line.strip()]


def _invariant_label(label: str) -> bool:
    key = label.split("(", 1)[0]
    return key in PREDICATES and PREDICATES[key].invariant


def validate_trace(events: Iterable[Mapping[str, Any]] | str | Path) -> list[str]:
    """Replay a trace and return every invariant violation found.

    Checked per trace: ticks are non-decreasing; no subtask runs more than
    ``max_retry + 1`` attempts; MANIPULATING is entered only on a tick whose
    report is Ready; base commands respect the active primitive's velocity
    caps and use a gait id of that primitive; a report with a violated
    safety predicate has status ``failed``; every replanned ``plan`` line is
    preceded by a ``feedback`` line; unsupervised traces contain no report,
    feedback or recovery lines.
    """
    if isinstance(events, (str, Path)):
        events = read_trace(events)
    errors: list[str] = []
    supervised = True
    last_tick = -1
    reports: dict[int, Mapping] = {}
    plans = 0
    feedback_seen = 0
    for i, ev in enumerate(events):
        tick, kind, p = ev["tick"], ev["kind"], ev["payload"]
        if tick < last_tick:
            errors.append(f"line {i}: tick {tick} after {last_tick}")
        last_tick = tick
        if kind == "trial":
            supervised = bool(p.get("supervisor_enabled", True))
        elif kind == "subtask":
            a, m = p.get("attempt"), p.get("max_retry")
            if a is not None and m is not None and a > m + 1:
                errors.append(f"tick {tick}: subtask {p.get('name')} attempt {a} exceeds max_retry+1={m + 1}")
        elif kind == "report":
            reports[tick] = p
            if not supervised:
                errors.append(f"tick {tick}: report in unsupervised trace")
            violated = [f for f in p.get("preconditions", ()) if _invariant_label(f["label"]) and not f["bit"]]
            if violated and p.get("status") != "failed":
                errors.append(f"tick {tick}: safety predicate {violated[0]['label']} violated but status {p.get('status')}")
        elif kind in ("feedback", "recovery"):
            if not supervised:
                errors.append(f"tick {tick}: {kind} in unsupervised trace")
            if kind == "feedback":
                feedback_seen += 1
        elif kind == "plan":
            plans += 1
            if plans > 1 and feedback_seen < plans - 1:
                errors.append(f"tick {tick}: replanned program without preceding feedback")
        elif kind == "command":
            if p.get("entered_manipulation") and supervised:
                r = reports.get(tick)
                if r is None or not r.get("ready"):
                    errors.append(f"tick {tick}: MANIPULATING entered without a Ready report")
            prim = p.get("primitive")
            base = p.get("base", [0.0, 0.0, 0.0])
            v = VelocityCommand(*base)
            if prim is None:
                if any(abs(c) > 1e-12 for c in base):
                    errors.append(f"tick {tick}: base motion without a primitive")
                continue
            try:
                prim_e = Primitive(prim)
            except ValueError:
                errors.append(f"tick {tick}: unknown primitive {prim!r}")
                continue
            if not within_caps(v, prim_e, tol=1e-6):
                errors.append(f"tick {tick}: command {base} exceeds {prim} caps")
            if p.get("gait_id") not in GAIT_TABLE[prim_e]:
                errors.append(f"tick {tick}: gait {p.get('gait_id')} not in {prim} group")
    return errors
