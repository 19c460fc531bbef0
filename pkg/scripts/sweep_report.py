"""Run the RTT sweep and print per-cell mean samples and energy for every scheme.

Marks cells where aperiodic-energy does not beat greedy and cdf on energy, and
prints the cdf / aperiodic-samples sample ratio at each RTT.

Usage: python scripts/sweep_report.py [--reps N] [--steps N] [--variant fitted] [--seed S]
"""

import argparse

from wcasim.calibration import default_calibration
from wcasim.simulator import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--variant", default="empirical")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--include-periodic", action="store_true")
    args = ap.parse_args()
    cfg = ExperimentConfig(reps=args.reps, steps=args.steps, variant=args.variant, seed=args.seed)
    if args.include_periodic:
        cfg = cfg.override(schemes=cfg.schemes + ("periodic",))
    res = run_experiment(cfg, default_calibration())

    for metric, unit in (("samples", ""), ("energy", " J"), ("wait", " s")):
        print(f"\nmean {metric} per step{unit}")
        print("level rtt   " + " ".join(f"{s:>17}" for s in cfg.schemes))
        for lv in cfg.levels:
            for rtt in cfg.rtts:
                vals = [res.mean(s, lv, rtt, metric) for s in cfg.schemes]
                flag = ""
                if metric == "energy":
                    e = res.mean("aperiodic-energy", lv, rtt, "energy")
                    if e > min(res.mean("greedy", lv, rtt, "energy"), res.mean("cdf", lv, rtt, "energy")):
                        flag = "  <- energy scheme not best"
                if metric == "samples":
                    ratio = res.mean("cdf", lv, rtt, "samples") / res.mean("aperiodic-samples", lv, rtt, "samples")
                    flag = f"  cdf/aperiodic {ratio:.2f}"
                print(f"{lv:<5} {rtt:<4.1f}  " + " ".join(f"{v:>17.5f}" for v in vals) + flag)


if __name__ == "__main__":
    main()
