"""Per-step cost of the baseline and the SVD-based loop as the data grows.

Runs both loops from ``col_H = 200`` to about 2000 and prints quartile means.

    python3 scripts/timing_trend.py [--steps 1820] [--seed 0]
"""

import argparse

import numpy as np

from rdeepc.ltisim import benchmark_system
from rdeepc.recursion import BASELINE_ALG1, EFFICIENT_ALG3, LoopConfig, run_closed_loop


def quartile_times(rec, lo=(200, 700), hi=(1500, 2000)):
    t = rec.update_time + rec.solve_time
    first = t[(rec.col_H >= lo[0]) & (rec.col_H <= lo[1])]
    last = t[(rec.col_H >= hi[0]) & (rec.col_H <= hi[1])]
    return float(first.mean()), float(last.mean())


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=1820)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    plant = benchmark_system()
    res = {}
    for alg in (EFFICIENT_ALG3, BASELINE_ALG1):
        # 219 bootstrap samples give 200 initial columns at L = 20
        rec = run_closed_loop(plant, LoopConfig(algorithm=alg, steps=args.steps, seed=args.seed, bootstrap=219))
        first, last = quartile_times(rec)
        res[alg] = (first, last)
        print(f"{alg:16s} first {first * 1e3:8.3f} ms  last {last * 1e3:8.3f} ms  growth {last / first:6.2f}x")
    print(f"time_alg1 / time_alg3 at the end: {res[BASELINE_ALG1][1] / res[EFFICIENT_ALG3][1]:.1f}x")


if __name__ == "__main__":
    main()
