"""Write synthetic (seq_len, runtime_us) samples for the 7B preset.

Runtimes are forward times from the cost model at a fixed efficiency, with
multiplicative log-normal noise and a fixed launch overhead, so the fitted
LUT has the convex shape of real measurements.
"""

import argparse
import csv

import numpy as np

from ditsched.costmodel import LatentDims, model_flops, seaweed7b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="configs/runtime_samples.csv")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--peak", type=float, default=989e12)
    ap.add_argument("--efficiency", type=float, default=0.45)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    model = seaweed7b()
    lengths = np.unique(np.geomspace(256, 262144, 40).astype(int))
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seq_len", "runtime_us"])
        for s in lengths:
            base = model_flops(LatentDims(1, 1, int(s)), model) / (args.peak * args.efficiency) * 1e6 + 2000.0
            for _ in range(args.repeats):
                w.writerow([int(s), f"{base * rng.lognormal(0.0, 0.05):.1f}"])


if __name__ == "__main__":
    main()
