#!/usr/bin/env python3
"""Tune a policy-gradient unit on the clipped LQG benchmark and compare the
result against the analytic (Riccati) policy and the default configuration.

Each seed takes a few minutes; the tuner runs its default 50 generations of
20 agents. Example:

    python3 scripts/run_lqg_tuning.py --seeds 2 42 --out runs/lqg_tuning.json
"""
import argparse
import json
import math
import time
from pathlib import Path

from rlpipe import (
    FixedUnit,
    IntRangeEntry,
    Pipeline,
    RealRangeEntry,
    RngStream,
    Stage,
    StageKind,
    TunableUnit,
    default_lqg,
    evaluate_policy,
    riccati_policy,
    run_pipeline,
)

SPACE = (
    RealRangeEntry("learning_rate", 5e-4, 3e-3, scale="log"),
    IntRangeEntry("n_episodes_per_fit", 100, 300),
    RealRangeEntry("init_std", 0.05, 0.2, scale="log"),
)


def run_pg_pipeline(unit, seed):
    pipeline = Pipeline("online", (
        Stage(StageKind.POLICY_GENERATION, unit),
        Stage(StageKind.POLICY_EVALUATION, FixedUnit("monte_carlo", {"n_episodes": 1000})),
    ), seed=seed)
    result = run_pipeline(pipeline, env=default_lqg())
    return result.evaluation.mean, result.per_stage[0].params


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[2, 42, 2022])
    parser.add_argument("--out", default=None, help="optional JSON results file")
    args = parser.parse_args()

    env = default_lqg()
    reference = evaluate_policy(env, riccati_policy(env), 10_000, "discounted",
                                RngStream(900_001).child(0)).mean
    print(f"riccati policy return (10k episodes): {reference:.4f}")

    rows = []
    for seed in args.seeds:
        t0 = time.monotonic()
        tuned_unit = TunableUnit("gpomdp", space=SPACE, tuner={"type": "genetic"},
                                 base_params={"n_epochs": 250}, fitness_episodes=100)
        tuned, chosen = run_pg_pipeline(tuned_unit, seed)
        try:
            default, _ = run_pg_pipeline(FixedUnit("gpomdp", {}), seed)
        except Exception as exc:  # diverged default run counts as -inf
            print(f"  default configuration failed: {exc}")
            default = -math.inf
        elapsed = time.monotonic() - t0
        gap = abs(tuned - reference) / abs(reference)
        print(f"seed {seed}: tuned {tuned:.4f} ({gap:.1%} from optimal) "
              f"default {default:.4f} chosen {chosen} [{elapsed:.0f}s]")
        rows.append({"seed": seed, "tuned": tuned, "default": default,
                     "chosen": chosen, "seconds": round(elapsed, 1)})

    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps({"reference": reference, "runs": rows}, indent=2) + "\n",
                       encoding="utf-8")
        print(f"wrote {out}")


if __name__ == "__main__":
    main()
