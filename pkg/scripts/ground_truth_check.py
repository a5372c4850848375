"""Exact predictor on noiseless held-out windows of the benchmark plant.

Compares the prediction error with its analytic value ``Gamma (A-KC)^n_init x``
(the state left over from before the init window).

    python3 scripts/ground_truth_check.py [--n-init 50] [--windows 50]
"""

import argparse
import warnings

import numpy as np

from rdeepc.ltisim import benchmark_system, ground_truth_predictor, observability_matrix, simulate


def held_out_errors(n_init=50, n_pred=50, windows=50, T=3000, seed=0):
    plant = benchmark_system()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pm = ground_truth_predictor(plant, n_init, n_pred)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((T, 1))
    y, xs = simulate(plant, u)
    leftover = observability_matrix(plant, n_pred) @ np.linalg.matrix_power(plant.A_tilde, n_init)
    starts = rng.choice(np.arange(n_init, T - n_pred), size=windows, replace=False)
    errs, transients, ymax = [], [], []
    for t in starts:
        pred = pm.predict(y[t - n_init:t], u[t - n_init:t], u[t:t + n_pred])
        errs.append(np.max(np.abs(y[t:t + n_pred].ravel() - pred)))
        transients.append(np.max(np.abs(leftover @ xs[t - n_init])))
        ymax.append(np.max(np.abs(y[t:t + n_pred])))
    return np.array(errs), np.array(transients), np.array(ymax)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-init", type=int, default=50)
    ap.add_argument("--windows", type=int, default=50)
    args = ap.parse_args(argv)
    errs, trans, ymax = held_out_errors(args.n_init, args.n_init, args.windows)
    plant = benchmark_system()
    print(f"||(A-KC)^{args.n_init}||_2 = {np.linalg.norm(np.linalg.matrix_power(plant.A_tilde, args.n_init), 2):.3e}")
    print(f"max |error|            = {errs.max():.3e}")
    print(f"max |Gamma At^n x|     = {trans.max():.3e}")
    print(f"max |error - transient| over windows = {np.max(np.abs(errs - trans)):.3e}")
    print(f"max |y| in windows     = {ymax.max():.1f}")


if __name__ == "__main__":
    main()
