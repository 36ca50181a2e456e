"""Round-robin vs seq_len-greedy vs runtime-greedy balancing over several seeds."""

import argparse
from dataclasses import replace

from ditsched.config import load_config
from ditsched.pipeline import STRATEGIES, run_compare


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/default.json")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--ranks", type=int, nargs="+", default=[2, 4, 8])
    args = ap.parse_args()

    base = load_config(args.config)
    print(f"{'ranks':>5} {'seed':>4} " + " ".join(f"{s:>16}" for s in STRATEGIES) + "   runtime/seqlen")
    for r in args.ranks:
        for seed in range(args.seeds):
            cfg = replace(base, seed=seed, cluster=replace(base.cluster, ranks=r))
            reps = run_compare(cfg)
            ms = [reps[s].makespan / 1e6 for s in STRATEGIES]
            print(f"{r:>5} {seed:>4} " + " ".join(f"{m:>15.2f}s" for m in ms) + f"   {ms[2] / ms[1]:.4f}")


if __name__ == "__main__":
    main()
