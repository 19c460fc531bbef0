"""Run the timing-model verification protocols and print the headline numbers.

For each neuroticism level and model variant: the first-draw gap between
TTF = 5 s and TTF = 0 s, and the 12-step drift under each constant TTF.
Also prints the lifetime comparison against the TTF-blind reference.  With
``--seeds N`` it also repeats the averaged protocol for N seeds and prints the
mean and spread of each estimate, since one 600-repetition run carries about
2 pp of noise on the drifts.

Usage: python scripts/verify_timing_model.py [--calibration PATH] [--reps N] [--seed S] [--seeds N]
"""

import argparse

import numpy as np

from wcasim.calibration import default_calibration, load_calibration
from wcasim.protocols import summarize_level, summarize_model
from wcasim.simulator import ExperimentConfig, lifetime_study
from wcasim.timing import NeuroticismLevel, Variant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--calibration")
    ap.add_argument("--reps", type=int, default=600)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, default=0)
    args = ap.parse_args()
    table = load_calibration(args.calibration) if args.calibration else default_calibration()

    print("level  variant    gap_5s_vs_0s  drift_12_at_0s  drift_12_at_5s")
    for level in NeuroticismLevel:
        for variant in Variant:
            s = summarize_level(table, level, args.reps, args.seed, variant)
            print(f"{level.value:<6} {variant.value:<10} {100 * s.gap:>11.2f}% "
                  f"{100 * s.low_change:>14.2f}% {100 * s.high_change:>14.2f}%")
    for level, s in summarize_model(table, args.reps, args.seed).items():
        print(f"{level.value:<6} {'average':<10} {100 * s.gap:>11.2f}% "
              f"{100 * s.low_change:>14.2f}% {100 * s.high_change:>14.2f}%")

    if args.seeds:
        runs = []
        for seed in range(args.seeds):
            s = summarize_model(table, args.reps, seed)
            lo, hi = s[NeuroticismLevel.LOW], s[NeuroticismLevel.HIGH]
            runs.append((lo.gap, hi.gap, -(lo.low_change + hi.low_change) / 2, hi.high_change))
        runs = 100 * np.array(runs)
        print(f"\nover {args.seeds} seeds: mean (sd)")
        for name, col in zip(("low gap", "high gap", "speed-up at 0 s", "high slow-down at 5 s"), runs.T):
            print(f"  {name:<22} {col.mean():6.2f}% ({col.std(ddof=1):.2f})")

    print("\nlifetime vs reference (100 steps, 45 reps)")
    res = lifetime_study(ExperimentConfig(lifetime_ttfs=(0.0, 2.5, 5.0), seed=args.seed), table)
    for d in res.diffs:
        print(f"{d.scheme:<6} ttf {dict(d.keys)['ttf_s']:.1f} s  {d.pct:+6.2f}% "
              f"[{d.ci95_lo:+.2f}, {d.ci95_hi:+.2f}]")


if __name__ == "__main__":
    main()
