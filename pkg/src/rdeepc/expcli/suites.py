"""Experiment bodies behind ``rdeepc run``; each writes its artifacts into ``out``."""

from __future__ import annotations

import logging
import time
from concurrent.futures import Executor, ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from rdeepc.controllers import DeepcConfig, solve_bilevel_deepc_kkt, solve_gain_controller, solve_l2_deepc
from rdeepc.expcli.config import ExperimentConfig
from rdeepc.expcli.reporting import (CONSISTENCY_SCHEMA, EQUIVALENCE_SCHEMA, SVD_BENCH_SCHEMA, trajectory_schema,
                                     write_csv)
from rdeepc.instances import random_request, random_stack
from rdeepc.ltisim import InnovationLti
from rdeepc.predictors import FORMS, LOWDIM_FORMS, pinv_predict, spc_gain
from rdeepc.recursion import (BASELINE_ALG1, EFFICIENT_ALG3, LoopConfig, TrajectoryRecord, run_closed_loop,
                              run_consistency_experiment)
from rdeepc.svdstream import append_update, downdate_and_append, forget_and_append, init_state, reduce_stack

log = logging.getLogger(__name__)


class ExperimentFailure(RuntimeError):
    """A run failed after artifacts were (partially) written; ``summary`` says where."""


@contextmanager
def _pool(n: int):
    if n <= 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=n) as ex:
        yield ex


def _map(ex: Executor | None, fn, *iterables):
    if ex is None:
        return [fn(*args) for args in zip(*iterables)]
    return list(ex.map(fn, *iterables))


# --------------------------------------------------------------------------- simulate

def _loop_config(cfg: ExperimentConfig, algorithm: str, seed: int) -> LoopConfig:
    s = cfg.simulate
    return LoopConfig(algorithm=algorithm, steps=s.steps, seed=seed, controller=cfg.controller,
                      bootstrap=s.bootstrap, bootstrap_var=s.bootstrap_var, reference_before=s.reference_before,
                      reference_after=s.reference_after, switch_step=s.switch_step, alpha=s.alpha)


def _simulate_one(sys: InnovationLti, cfg: ExperimentConfig, seed: int) -> dict:
    return {alg: run_closed_loop(sys, _loop_config(cfg, alg, seed)) for alg in cfg.simulate.algorithms}


def _trajectory_rows(rec: TrajectoryRecord) -> list:
    rows = []
    for k in range(rec.steps):
        rows.append((rec.algorithm, k, *rec.u[k], *rec.y[k], rec.reference[k], rec.update_time[k],
                     rec.solve_time[k], rec.objective[k], rec.rank[k], rec.col_H[k], rec.kkt_residual[k]))
    return rows


def run_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    sys = cfg.resolved_system()
    seeds = [cfg.seed + r for r in range(cfg.monte_carlo_runs)]
    with _pool(cfg.parallel) as ex:
        runs = _map(ex, _simulate_one, [sys] * len(seeds), [cfg] * len(seeds), seeds)
    algs = list(cfg.simulate.algorithms)
    schema = trajectory_schema(sys.n_u, sys.n_y)
    failures = []
    for r, recs in enumerate(runs):
        write_csv([row for alg in algs for row in _trajectory_rows(recs[alg])], schema, out / f"trajectories_{r}.csv")
        for alg in algs:
            if recs[alg].failed_step is not None:
                failures.append({"run": r, "seed": seeds[r], "algorithm": alg, "step": recs[alg].failed_step,
                                 "error": recs[alg].error})
    summary = {"experiment": "simulate", "runs": len(runs), "seeds": seeds, "algorithms": {}, "pairs": {},
               "failures": failures}
    for alg in algs:
        upd = np.concatenate([rs[alg].update_time for rs in runs])
        sol = np.concatenate([rs[alg].solve_time for rs in runs])
        summary["algorithms"][alg] = {"mean_update_time": float(upd.mean()) if upd.size else None,
                                      "mean_solve_time": float(sol.mean()) if sol.size else None,
                                      "mean_step_time": float((upd + sol).mean()) if upd.size else None}
    ref = algs[0]
    for alg in algs[1:]:
        e_u, e_y = [], []
        for rs in runs:
            k = min(rs[ref].steps, rs[alg].steps)
            e_u.append(float(np.mean(np.abs(rs[ref].u[:k] - rs[alg].u[:k]))) if k else np.nan)
            e_y.append(float(np.mean(np.abs(rs[ref].y[:k] - rs[alg].y[:k]))) if k else np.nan)
        summary["pairs"][alg] = {"reference": ref, "mean_e_u": float(np.mean(e_u)), "mean_e_y": float(np.mean(e_y)),
                                 "max_run_e_u": float(np.max(e_u)), "max_run_e_y": float(np.max(e_y))}
    if BASELINE_ALG1 in algs and EFFICIENT_ALG3 in algs:
        t1 = summary["algorithms"][BASELINE_ALG1]["mean_step_time"]
        t3 = summary["algorithms"][EFFICIENT_ALG3]["mean_step_time"]
        summary["time_ratio_alg1_over_alg3"] = t1 / t3 if t1 and t3 else None
    return summary


# --------------------------------------------------------------------------- consistency

def run_consistency(cfg: ExperimentConfig, out: Path) -> dict:
    sys = cfg.resolved_system()
    ccfg = cfg.consistency.to_consistency_config()
    seeds = [cfg.seed + r for r in range(cfg.monte_carlo_runs)]
    summary = {"experiment": "consistency", "seeds": seeds, "checkpoints": list(ccfg.checkpoints), "modes": {}}
    with _pool(cfg.parallel) as ex:
        for mode in cfg.consistency.modes:
            t0 = time.perf_counter()
            res = run_consistency_experiment(sys, mode, seeds=seeds, cfg=ccfg, executor=ex)
            write_csv(res.rows, CONSISTENCY_SCHEMA, out / f"consistency_{mode}.csv")
            curves = {}
            for method in ("SPC", "DDP1", "DDP2"):
                cols, mean = res.curve(method)
                curves[method] = {"col_H": cols.tolist(), "mean_total_error": mean.tolist(),
                                  "final_over_first": float(mean[-1] / mean[0]),
                                  "final_over_min": float(mean[-1] / mean.min())}
            summary["modes"][mode] = {"curves": curves, "elapsed_s": time.perf_counter() - t0}
    return summary


# --------------------------------------------------------------------------- svd_bench

def svd_bench_rows(mode: str, rows: int, seed_cols: int, appends: int, alpha: float, seed: int) -> list:
    """Track a random matrix through ``appends`` updates against a shadow copy and fresh SVDs."""
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((rows, seed_cols))
    state = init_state(H, mode=mode)
    out = []
    for k in range(appends):
        a = rng.standard_normal(rows)
        t0 = time.perf_counter()
        if mode == "grow":
            state = append_update(state, a)
            H = np.column_stack([H, a])
        elif mode == "forget":
            state = forget_and_append(state, alpha, a)
            H = np.column_stack([alpha * H, a])
        else:
            state = downdate_and_append(state, a)
            H = np.column_stack([H[:, 1:], a])
        dt = time.perf_counter() - t0
        s = np.linalg.svd(H, compute_uv=False)
        sig = np.zeros(max(s.size, state.sigma.size))
        sig[:state.sigma.size] = state.sigma
        ref = np.zeros_like(sig)
        ref[:s.size] = s
        sig_err = float(np.max(np.abs(sig - ref)) / s[0])
        G = H @ H.T
        Hb = state.U1 * state.sigma
        gram = float(np.linalg.norm(G - Hb @ Hb.T) / np.linalg.norm(G))
        U = state.U1
        orth = float(np.linalg.norm(U.T @ U - np.eye(U.shape[1])))
        out.append((mode, k + 1, H.shape[1], sig_err, gram, orth, dt))
    return out


def run_svd_bench(cfg: ExperimentConfig, out: Path) -> dict:
    sb = cfg.svd_bench
    rows = []
    summary = {"experiment": "svd_bench", "modes": {}}
    for mode in sb.modes:
        part = svd_bench_rows(mode, sb.rows, sb.seed_cols, sb.appends, sb.alpha, cfg.seed)
        rows += part
        summary["modes"][mode] = {"max_sigma_rel_error": max(r[3] for r in part),
                                  "max_gram_rel_error": max(r[4] for r in part),
                                  "max_orth_error": max(r[5] for r in part),
                                  "mean_update_time": float(np.mean([r[6] for r in part]))}
    write_csv(rows, SVD_BENCH_SCHEMA, out / "svd_bench.csv")
    return summary


# --------------------------------------------------------------------------- equivalence

EQUIVALENCE_THRESHOLDS = {
    "lowdim_deepc_vs_full": 1e-6,
    "efficient_vs_baseline_loop": 1e-6,
    "pinv_prediction_forms": 1e-8,
    "spc_vs_bilevel_deepc": 1e-8,
    "lowdim_spc_vs_spc": 1e-8,
}


def _instance_config(rng, stack, **kw) -> DeepcConfig:
    return DeepcConfig(n_init=stack.n_init, n_pred=stack.n_pred, reference=float(rng.normal()),
                       u_min=-1.0, u_max=1.0, **kw)


def check_lowdim_deepc(rng, instances: int) -> float:
    worst = 0.0
    for _ in range(instances):
        st, _, lg = random_stack(rng)
        cfg = _instance_config(rng, st, lambda_sigma=1e3, lambda_g=float(10 ** rng.uniform(-3, 1)))
        yi, ui = lg.y[-st.n_init:], lg.u[-st.n_init:]
        a = solve_l2_deepc(st, cfg, yi, ui, repr="full")
        b = solve_l2_deepc(st, cfg, yi, ui, repr="lowdim")
        worst = max(worst, float(np.max(np.abs(a.u_pred_opt - b.u_pred_opt))))
    return worst


def check_prediction_forms(rng, instances: int) -> float:
    worst = 0.0
    for _ in range(instances):
        st, _, _ = random_stack(rng)
        lo = reduce_stack(st)
        req = random_request(rng, st)
        preds = [pinv_predict(lo if f in LOWDIM_FORMS else st, req, f) for f in FORMS]
        scale = max(1.0, float(np.max(np.abs(preds[0]))))
        for p in preds[1:]:
            worst = max(worst, float(np.max(np.abs(p - preds[0]))) / scale)
    return worst


def check_spc_vs_bilevel(rng, instances: int) -> float:
    worst = 0.0
    for _ in range(instances):
        st, _, lg = random_stack(rng)
        cfg = _instance_config(rng, st)
        yi, ui = lg.y[-st.n_init:], lg.u[-st.n_init:]
        a = solve_gain_controller(spc_gain(st), cfg, yi, ui)
        b = solve_bilevel_deepc_kkt(st, cfg, yi, ui)
        c = solve_bilevel_deepc_kkt(reduce_stack(st), cfg, yi, ui)
        worst = max(worst, float(np.max(np.abs(a.u_pred_opt - b.u_pred_opt))),
                    float(np.max(np.abs(a.u_pred_opt - c.u_pred_opt))))
    return worst


def check_lowdim_spc(rng, instances: int) -> float:
    worst = 0.0
    for _ in range(instances):
        st, _, lg = random_stack(rng)
        cfg = _instance_config(rng, st)
        yi, ui = lg.y[-st.n_init:], lg.u[-st.n_init:]
        a = solve_gain_controller(spc_gain(st), cfg, yi, ui)
        b = solve_gain_controller(spc_gain(reduce_stack(st)), cfg, yi, ui)
        worst = max(worst, float(np.max(np.abs(a.u_pred_opt - b.u_pred_opt))))
    return worst


def check_loops(sys: InnovationLti, cfg: ExperimentConfig, runs: int, steps: int) -> float:
    worst = 0.0
    for r in range(runs):
        base = replace(_loop_config(cfg, BASELINE_ALG1, cfg.seed + r), steps=steps)
        a = run_closed_loop(sys, base)
        b = run_closed_loop(sys, replace(base, algorithm=EFFICIENT_ALG3))
        k = min(a.steps, b.steps)
        if k < steps:
            raise ExperimentFailure(f"loop run {r} stopped at step {k}: {a.error or b.error}")
        worst = max(worst, float(np.mean(np.abs(a.u - b.u))), float(np.mean(np.abs(a.y - b.y))))
    return worst


def run_equivalence(cfg: ExperimentConfig, out: Path) -> dict:
    n = cfg.equivalence.instances
    rng = np.random.default_rng(cfg.seed)
    loop_runs = min(cfg.monte_carlo_runs, 3)
    results = {
        "lowdim_deepc_vs_full": (n, check_lowdim_deepc(rng, n)),
        "efficient_vs_baseline_loop": (loop_runs, check_loops(cfg.resolved_system(), cfg, loop_runs,
                                                              cfg.equivalence.loop_steps)),
        "pinv_prediction_forms": (n, check_prediction_forms(rng, n)),
        "spc_vs_bilevel_deepc": (n, check_spc_vs_bilevel(rng, n)),
        "lowdim_spc_vs_spc": (n, check_lowdim_spc(rng, n)),
    }
    rows = []
    for name, (count, dev) in results.items():
        thr = EQUIVALENCE_THRESHOLDS[name]
        rows.append((name, count, dev, thr, "true" if dev < thr else "false"))
    write_csv(rows, EQUIVALENCE_SCHEMA, out / "equivalence.csv")
    return {"experiment": "equivalence", "all_passed": all(r[4] == "true" for r in rows),
            "checks": {r[0]: {"instances": r[1], "max_deviation": r[2], "threshold": r[3], "passed": r[4] == "true"}
                       for r in rows}}


SUITES = {"simulate": run_simulate, "consistency": run_consistency, "svd_bench": run_svd_bench,
          "equivalence": run_equivalence}
