"""Command-line entry point: seeded trials, success tables and the gait table."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .executor import gait_table_document
from .harness import CALIBRATED, TrialConfig, run_suite
from .planner import EXTERNAL, PlannerConfig
from .scenarios import SCENARIO_NAMES

__all__ = ["build_parser", "main"]

U64_MAX = 2**64 - 1


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _u64(text: str) -> int:
    n = int(text)
    if not 0 <= n <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {n}")
    return n


def _noise(text: str):
    if text == "none":
        return None
    if text == CALIBRATED:
        return CALIBRATED
    path = Path(text)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"noise must be 'none', 'calibrated' or a JSON file, got {text!r}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"{text}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seeded trials and print a success table")
    run.add_argument("--scenario", required=True, choices=SCENARIO_NAMES)
    run.add_argument("--seed", type=_u64, default=0, help="first seed; trials use consecutive seeds")
    run.add_argument("--trials", type=_positive_int, default=1)
    run.add_argument("--no-supervisor", action="store_true", help="open-loop ablation")
    run.add_argument("--ablation", action="store_true", help="run both supervisor settings side by side")
    run.add_argument("--no-recovery", action="store_true", help="fail on the first recovery trigger")
    run.add_argument("--noise", type=_noise, default=None, help="'none' (default), 'calibrated', or a JSON noise file")
    run.add_argument("--planner", choices=("rule", "external"), default="rule")
    run.add_argument("--trace-dir", type=Path, default=None)
    run.add_argument("--summary-json", type=Path, default=None, help="also write the summary as JSON here")
    run.add_argument("--max-sim-time", type=float, default=None)

    sub.add_parser("gaits", help="print the primitive to gait-id table as JSON")
    sub.add_parser("scenarios", help="list registered scenarios")
    return parser


def _summary(table, args) -> dict:
    doc = table.to_dict()
    doc["first_seed"] = args.seed
    doc["trials"] = {col: [r.to_dict() for r in rs] for col, rs in table.results.items()}
    return doc


def _run(args, out) -> int:
    try:
        planner = PlannerConfig() if args.planner == "rule" else PlannerConfig.from_env(EXTERNAL)
    except ValueError as exc:
        print(f"error: {exc} (set PLANNER_URL)", file=sys.stderr)
        return 2
    cfg = TrialConfig(
        seed=args.seed,
        noise=args.noise,
        supervisor_enabled=not args.no_supervisor,
        recovery_enabled=not args.no_recovery,
        planner=planner,
        max_sim_time=args.max_sim_time,
    )
    table = run_suite(args.scenario, args.trials, cfg, ablation=args.ablation, trace_dir=args.trace_dir, first_seed=args.seed)
    for col, rs in table.results.items():
        for r in rs:
            rec = ",".join(f"{k}={v}" for k, v in sorted(r.recoveries.items())) or "-"
            print(f"{col:<20} seed={r.seed:<6} success={str(r.success):<5} outcome={r.outcome} ticks={r.ticks} recoveries={rec}", file=out)
    print(table.text(), file=out)
    doc = _summary(table, args)
    if args.summary_json is not None:
        args.summary_json.parent.mkdir(parents=True, exist_ok=True)
        args.summary_json.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if args.trace_dir is not None:
        (args.trace_dir / f"{args.scenario}_summary.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return 0


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out if out is not None else sys.stdout
    args = build_parser().parse_args(argv)
    if args.command == "gaits":
        print(json.dumps(gait_table_document(), indent=2), file=out)
        return 0
    if args.command == "scenarios":
        for name in SCENARIO_NAMES:
            print(name, file=out)
        return 0
    return _run(args, out)


if __name__ == "__main__":
    raise SystemExit(main())
