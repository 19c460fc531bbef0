"""Regenerate the bundled synthetic calibration table.

Each cell is given as (mean, sigma, tau) of an exGaussian; mu = mean - tau.
The values were tuned against the timing-model verification protocols
(``python scripts/verify_timing_model.py``) and the RTT sweep:

  * means were solved so the protocol expectations (not one seed's estimate)
    sit on the target gaps and drifts; the step-1 bin mix after a random
    warm-up is about 18/55/26% over bins 0-2 at TTF 0 and 26/53/21% over
    bins 4-6 at TTF 5;
  * all cells share sigma and nearly share tau, so the TTF 0 vs TTF 5
    comparison, made with common random numbers, stays low-noise;
  * bins 4-6 have a lighter tail, which keeps high-TTF execution times
    below about 6 s (two captures per step at large RTT);
  * bins 0-3 are wider, which keeps the pooled corpus broad.

Usage: python scripts/make_default_calibration.py [--out PATH]
"""

import argparse
from pathlib import Path

from wcasim.calibration import dump_calibration, synthesize_table
from wcasim.timing import ExGaussianParams, NeuroticismLevel

WIDE = (0.4, 1.8)
NARROW = (0.4, 1.2)

CELLS = {
    NeuroticismLevel.LOW: [
        (3.74, *WIDE), (4.12, *WIDE), (4.16, *WIDE), (4.18, *WIDE),
        (4.32, *NARROW), (4.32, *NARROW), (4.32, *NARROW),
    ],
    NeuroticismLevel.HIGH: [
        (3.82, *WIDE), (4.19, *WIDE), (4.26, *WIDE), (4.31, *WIDE),
        (4.54, *NARROW), (4.54, *NARROW), (5.16, *NARROW),
    ],
}
N_SAMPLES = 1000
SEED = 1

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "wcasim" / "data" / "default_calibration.jsonl"


def build():
    params = {
        (level, k): ExGaussianParams(round(mean - tau, 6), sigma, tau)
        for level, rows in CELLS.items()
        for k, (mean, sigma, tau) in enumerate(rows)
    }
    return synthesize_table(params, n_samples=N_SAMPLES, seed=SEED)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    table = build()
    comment = (
        "Synthetic calibration table generated by scripts/make_default_calibration.py.\n"
        f"{N_SAMPLES} samples per cell, seed {SEED}; cells share base draws (comonotone)."
    )
    dump_calibration(table, args.out, comment=comment)
    print(f"wrote {args.out}")
    for (level, k), m in sorted(table.means().items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        print(f"  {level.value:4s} bin {k}: mean {m:.3f} s")


if __name__ == "__main__":
    main()
