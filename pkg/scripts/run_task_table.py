"""Per-task success counts for every registered scenario.

Mirrors the 10-trials-per-task protocol: each scenario runs ``--trials``
seeded trials with the supervisor on (and off with ``--ablation``).

    python3 scripts/run_task_table.py --trials 10 --noise calibrated
"""

from __future__ import annotations

import argparse

from taskloop.harness import CALIBRATED, TrialConfig, run_suite
from taskloop.scenarios import SCENARIO_NAMES


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--noise", choices=("none", CALIBRATED), default="none")
    ap.add_argument("--ablation", action="store_true")
    args = ap.parse_args()

    cfg = TrialConfig(noise=None if args.noise == "none" else CALIBRATED)
    header = None
    for name in SCENARIO_NAMES:
        table = run_suite(name, args.trials, cfg, ablation=args.ablation)
        if header is None:
            header = f"{'scenario':<20}" + "".join(f"{c:>20}" for c in table.counts)
            print(header)
        print(f"{name:<20}" + "".join(f"{table.cell(c):>20}" for c in table.counts), flush=True)


if __name__ == "__main__":
    main()
