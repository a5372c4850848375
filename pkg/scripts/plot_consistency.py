"""Seed-averaged consistency curves from ``consistency_<mode>.csv``.

    python3 scripts/plot_consistency.py results/consistency/consistency_open_loop.csv [--png out.png]

Prints a table; with ``--png`` and matplotlib installed, also draws a log-log plot.
"""

import argparse
import sys
from collections import defaultdict

import numpy as np

from rdeepc.expcli.reporting import CONSISTENCY_SCHEMA, read_csv


def load_consistency(path, block="total"):
    """``{method: (col_H array, mean error array, std array)}`` for one block."""
    acc = defaultdict(lambda: defaultdict(list))
    for col_H, method, blk, err, _seed in read_csv(path, CONSISTENCY_SCHEMA):
        if blk == block:
            acc[method][col_H].append(err)
    out = {}
    for method, by_col in acc.items():
        cols = np.array(sorted(by_col))
        vals = [np.asarray(by_col[c]) for c in cols]
        out[method] = (cols, np.array([v.mean() for v in vals]), np.array([v.std() for v in vals]))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("--block", default="total")
    ap.add_argument("--png")
    args = ap.parse_args(argv)
    curves = load_consistency(args.csv, args.block)
    for method, (cols, mean, std) in sorted(curves.items()):
        print(method)
        for c, m, s in zip(cols, mean, std):
            print(f"  col_H={c:6d}  error={m:.4e}  (std {s:.1e})")
    if args.png:
        try:
            import matplotlib
            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            print("matplotlib not installed; skipping the figure", file=sys.stderr)
            return 0
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for method, (cols, mean, std) in sorted(curves.items()):
            ax.errorbar(cols, mean, yerr=std, marker="o", capsize=3, label=method)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("col_H")
        ax.set_ylabel(f"||K_hat - K_true||_F ({args.block})")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.png, dpi=150)
    return 0


if __name__ == "__main__":
    sys.exit(main())
