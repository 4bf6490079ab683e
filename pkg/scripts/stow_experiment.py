#!/usr/bin/env python3
"""Compare planner heuristics on simulated stow episodes.

Runs batches of seeded episodes with the suction-first window and failure
backoff enabled vs disabled and prints picks-per-episode and attempt counts.

    python3 scripts/stow_experiment.py --episodes 20 --objects 12
"""

import argparse
import statistics

import numpy as np

from binpick.planner import (PlannerConfig, PrimitiveKind, SimObject,
                             SimulatedBin, logistic_success_model,
                             pick_success_summary, run_stow_episode)


def random_bin(n_objects, seed):
    rng = np.random.default_rng(seed)
    objects = []
    for i in range(n_objects):
        position = np.array([rng.uniform(0.05, 0.35), rng.uniform(0.05, 0.25),
                             rng.uniform(0.02, 0.08)])
        affordances = {kind: float(rng.uniform(0.25, 0.95))
                       for kind in PrimitiveKind}
        objects.append(SimObject(f"obj{i:03d}", position, affordances))
    return SimulatedBin(objects)


def run_batch(name, cfg, episodes, objects, time_limit):
    picked, attempts, suction_rates = [], [], []
    for seed in range(episodes):
        log = run_stow_episode(random_bin(objects, seed), cfg,
                               logistic_success_model(), time_limit=time_limit,
                               seed=seed)
        summary = log[-1]
        picked.append(summary["picked"])
        attempts.append(sum(1 for r in log if r["event"] == "attempt"))
        rate = pick_success_summary(log)["suction"]["rate"]
        if rate is not None:
            suction_rates.append(rate)
    print(f"{name:<28} picked {statistics.mean(picked):5.2f}/{objects} "
          f"attempts {statistics.mean(attempts):6.2f} "
          f"suction success {100 * statistics.mean(suction_rates):5.1f}%")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=20)
    parser.add_argument("--objects", type=int, default=12)
    parser.add_argument("--time-limit", type=float, default=600.0)
    args = parser.parse_args()

    full = PlannerConfig()
    no_suction_first = PlannerConfig(suction_first_window=0.0)
    no_backoff = PlannerConfig(failure_window=1e-9)
    run_batch("full heuristics", full, args.episodes, args.objects,
              args.time_limit)
    run_batch("no suction-first window", no_suction_first, args.episodes,
              args.objects, args.time_limit)
    run_batch("no failure backoff", no_backoff, args.episodes, args.objects,
              args.time_limit)


if __name__ == "__main__":
    main()
