"""Run the standard depth-sweep benchmark and print the MLP vs CNN grid.

    python scripts/desk_sweep.py [--seeds 0 1 2] [--jobs N] [--out grid.json]
"""
import argparse
import json
import sys
import time

from akinet.evaluation import SweepBenchmark, sweep_trend


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", help="write every grid as JSON here")
    args = ap.parse_args()

    grids = {}
    for seed in args.seeds:
        t = time.time()
        rep = SweepBenchmark(seed=seed).run(jobs=args.jobs)
        trend = sweep_trend(rep)
        print(f"seed {seed} ({time.time() - t:.0f}s)")
        print(f"  {'depth':>5}  {'mlp':>12}  {'cnn':>12}")
        for d in sorted({d for d, _ in rep.cells}):
            row = []
            for col in ("mlp", "cnn"):
                c = rep.cells[(d, col)]
                row.append(f"{c.mean_auroc:.4f}" + ("" if c.valid else " (inv)") if c.mean_auroc is not None else "invalid")
            print(f"  {d:>5}  {row[0]:>12}  {row[1]:>12}")
        print(f"  trend: {trend}")
        sys.stdout.flush()
        grids[seed] = {**rep.to_dict(include_timestamps=False), "trend": trend}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(grids, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
