"""Fuzz trial configurations and replay every trace through the validator.

    python3 scripts/fuzz_traces.py --trials 200 --seed 7007
"""

from __future__ import annotations

import argparse

import numpy as np

from taskloop.harness import TrialConfig, run_trial
from taskloop.scenarios import SCENARIO_NAMES
from taskloop.trace import read_trace, validate_trace


def random_config(rng: np.random.Generator) -> tuple[str, TrialConfig]:
    name = SCENARIO_NAMES[int(rng.integers(len(SCENARIO_NAMES)))]
    noise = {
        "depth_sigma": float(rng.uniform(0.0, 0.02)),
        "pixel_dropout": float(rng.uniform(0.0, 0.2)),
        "mask_miss_prob": float(rng.uniform(0.0, 0.4)),
        "distractor_prob": float(rng.uniform(0.0, 0.3)),
        "bursts": int(rng.integers(0, 4)),
        "burst_ticks": int(rng.integers(5, 25)),
    }
    faults = ((int(rng.integers(10, 200)), int(rng.integers(1, 6))),) if rng.random() < 0.3 else None
    return name, TrialConfig(
        seed=int(rng.integers(2**32)),
        noise=noise,
        supervisor_enabled=bool(rng.random() < 0.8),
        recovery_enabled=bool(rng.random() < 0.9),
        max_sim_time=float(rng.uniform(15.0, 40.0)),
        stance_faults=faults,
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7007)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    clean = 0
    for k in range(args.trials):
        name, cfg = random_config(rng)
        r = run_trial(name, cfg)
        errs = validate_trace(read_trace(r.trace.lines))
        clean += not errs
        if errs:
            print(f"[{k}] {name} seed={cfg.seed}: {errs[0]}")
    print(f"validator clean on {clean}/{args.trials} trials")


if __name__ == "__main__":
    main()
