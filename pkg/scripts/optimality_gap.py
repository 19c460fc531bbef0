"""Compare the closed-form Rayleigh schedule with the grid DP optimum.

Prints the exact penalty of both and the relative gap for a sigma x alpha/beta
grid.  The DP uses a grid step of ``--spacing`` times sigma.

Usage: python scripts/optimality_gap.py [--spacing 0.02]
"""

import argparse

from wcasim.optimizer import PenaltyWeights, Rayleigh, brute_force_schedule, exact_penalty, rayleigh_schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spacing", type=float, default=0.02)
    ap.add_argument("--sigmas", default="1,2,5")
    ap.add_argument("--ratios", default="0.5,2,10")
    args = ap.parse_args()
    print("sigma  alpha/beta  closed_form  dp_optimum  gap     n_closed  n_dp")
    for sigma in map(float, args.sigmas.split(",")):
        d = Rayleigh(sigma)
        for ratio in map(float, args.ratios.split(",")):
            w = PenaltyWeights.from_ratio(ratio)
            cs = rayleigh_schedule(sigma, w)
            ds = brute_force_schedule(d, w, args.spacing * sigma)
            a, b = exact_penalty(cs, d, w).penalty, exact_penalty(ds, d, w).penalty
            print(f"{sigma:<6g} {ratio:<11g} {a:<12.6f} {b:<11.6f} {100 * (a / b - 1):5.2f}%  "
                  f"{len(cs):<9d} {len(ds)}")


if __name__ == "__main__":
    main()
