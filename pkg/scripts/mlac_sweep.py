"""Exposed backward overhead of the MLAC plan as the GPU activation budget grows."""

import argparse

from ditsched.mlac import Decision, TierBandwidths, mlac_oracle, plan_mlac, read_graph


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--graph", default="configs/act_graph.csv")
    ap.add_argument("--gpu-cpu", type=float, default=25e9)
    ap.add_argument("--cpu-disk", type=float, default=5e9)
    ap.add_argument("--compute", type=float, default=445e12)
    ap.add_argument("--backward-us", type=float, default=30_000)
    ap.add_argument("--steps", type=int, default=10)
    args = ap.parse_args()

    g = read_graph(args.graph)
    bw = TierBandwidths(args.gpu_cpu, args.cpu_disk, args.compute)
    print(f"{'budget MB':>10} {'resident MB':>12} {'overhead us':>12} {'oracle us':>10}  keep/cpu/disk/recompute")
    for k in range(args.steps + 1):
        budget = g.total_bytes * k / args.steps
        p = plan_mlac(g, budget, bw, args.backward_us)
        o = mlac_oracle(g, budget, bw, args.backward_us)
        mix = "/".join(str(p.count(d)) for d in Decision)
        print(f"{budget / 1e6:>10.0f} {p.gpu_resident_bytes / 1e6:>12.0f} {p.est_overhead:>12.0f} "
              f"{o.est_overhead:>10.0f}  {mix}")


if __name__ == "__main__":
    main()
