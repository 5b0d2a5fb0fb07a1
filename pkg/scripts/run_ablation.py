"""Paired supervisor ablation under calibrated noise.

Runs the same seeds with the supervisor on and off for each scenario and
prints the side-by-side success table.  Example:

    python3 scripts/run_ablation.py --trials 50 --out results/ablation.json
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from taskloop.harness import CALIBRATED, TrialConfig, run_suite
from taskloop.scenarios import SCENARIO_NAMES

DEFAULT = ("tidy_desk", "tabletop_sorting", "bring_me_a_drink")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenarios", nargs="+", choices=SCENARIO_NAMES, default=list(DEFAULT))
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=None, help="write the tables as JSON here")
    args = ap.parse_args()

    cfg = TrialConfig(noise=CALIBRATED)
    rows = []
    print(f"{'scenario':<20}{'with_supervisor':>18}{'without_supervisor':>20}{'time':>8}")
    for name in args.scenarios:
        t0 = time.perf_counter()
        table = run_suite(name, args.trials, cfg, ablation=True, first_seed=args.first_seed)
        dt = time.perf_counter() - t0
        print(f"{name:<20}{table.cell('with_supervisor'):>18}{table.cell('without_supervisor'):>20}{dt:>7.0f}s", flush=True)
        rows.append(table.to_dict())
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps({"first_seed": args.first_seed, "tables": rows}, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
