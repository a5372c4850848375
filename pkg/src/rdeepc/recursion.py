"""Online receding-horizon loops and predictor consistency experiments."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from rdeepc.controllers import ControlDecision, DeepcConfig, solve_gain_controller, solve_l2_deepc
from rdeepc.errors import InvalidInput, RdeepcError
from rdeepc.hankel import (HankelStack, SignalLog, append_column, check_persistent_excitation,
                           stack_and_partition, window_vector)
from rdeepc.ltisim import InnovationLti, PredictorMatrices, ground_truth_predictor
from rdeepc.numkit import DEFAULT_RANK_TOL
from rdeepc.predictors import extract_predictor_matrices, spc_gain
from rdeepc.svdstream import (FORGET, GROW, SLIDE, append_update, downdate_and_append, forget_and_append,
                              init_state, reduce_stack, transformed_stack)

log = logging.getLogger(__name__)

BASELINE_ALG1 = "baseline_alg1"
EFFICIENT_ALG3 = "efficient_alg3"
EFFICIENT_SPC_ALG6 = "efficient_spc_alg6"
ADAPTIVE_FORGET = "adaptive_forget"
ADAPTIVE_SLIDE = "adaptive_slide"
BASELINE_FORGET = "baseline_forget"
BASELINE_SLIDE = "baseline_slide"
ALGORITHMS = (BASELINE_ALG1, EFFICIENT_ALG3, EFFICIENT_SPC_ALG6, ADAPTIVE_FORGET, ADAPTIVE_SLIDE,
              BASELINE_FORGET, BASELINE_SLIDE)

_SVD_MODE = {EFFICIENT_ALG3: GROW, EFFICIENT_SPC_ALG6: GROW, ADAPTIVE_FORGET: FORGET, ADAPTIVE_SLIDE: SLIDE}


@dataclass(frozen=True)
class LoopConfig:
    algorithm: str = EFFICIENT_ALG3
    steps: int = 300
    seed: int = 0
    controller: DeepcConfig = field(default_factory=DeepcConfig)
    bootstrap: int = 200
    bootstrap_var: float = 1.0
    reference_before: float = 10.0
    reference_after: float = 0.0
    switch_step: int | None = None  # default: steps // 2
    alpha: float = 0.99
    rank_tol: float = DEFAULT_RANK_TOL
    warm_start: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidInput(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.steps < 1:
            raise InvalidInput("steps must be positive")
        L = self.controller.n_init + self.controller.n_pred
        if self.bootstrap < L:
            raise InvalidInput(f"bootstrap must cover at least one window of {L} steps")
        if self.bootstrap_var <= 0:
            raise InvalidInput("bootstrap_var must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput("alpha must lie in (0, 1)")

    @property
    def L(self) -> int:
        return self.controller.n_init + self.controller.n_pred

    def reference_at(self, k: int) -> float:
        switch = self.steps // 2 if self.switch_step is None else self.switch_step
        return self.reference_before if k < switch else self.reference_after


@dataclass
class TrajectoryRecord:
    """Per-step log of a closed loop; arrays have one row per executed step."""

    algorithm: str
    seed: int
    u: np.ndarray
    y: np.ndarray
    reference: np.ndarray
    update_time: np.ndarray
    solve_time: np.ndarray
    objective: np.ndarray
    rank: np.ndarray
    col_H: np.ndarray
    kkt_residual: np.ndarray
    bootstrap_u: np.ndarray
    bootstrap_y: np.ndarray
    failed_step: int | None = None
    error: str | None = None

    @property
    def steps(self) -> int:
        return self.u.shape[0]

    def truncated(self, k: int) -> "TrajectoryRecord":
        names = ("u", "y", "reference", "update_time", "solve_time", "objective", "rank", "col_H", "kkt_residual")
        parts = {n: getattr(self, n)[:k] for n in names}
        return TrajectoryRecord(self.algorithm, self.seed, bootstrap_u=self.bootstrap_u,
                                bootstrap_y=self.bootstrap_y, failed_step=self.failed_step, error=self.error, **parts)


def loop_innovations(sys: InnovationLti, cfg: LoopConfig):
    """Bootstrap input and innovation stream drawn from ``cfg.seed``.

    Depends only on the seed and sizes, so every algorithm run with the same
    seed sees the same disturbances.
    """
    rng = np.random.default_rng(cfg.seed)
    u_boot = np.sqrt(cfg.bootstrap_var) * rng.standard_normal((cfg.bootstrap, sys.n_u))
    e = sys.innovations(cfg.bootstrap + cfg.steps, rng)
    return u_boot, e


class _Plant:
    def __init__(self, sys: InnovationLti, e):
        self.sys, self.e, self.x, self.t = sys, e, np.zeros(sys.n_x), 0

    def step(self, u):
        s = self.sys
        y = s.C @ self.x + s.D @ u + self.e[self.t]
        self.x = s.A @ self.x + s.B @ u + s.K @ self.e[self.t]
        self.t += 1
        return y


class _Data:
    """Hankel data as seen by one algorithm: raw stack, SVD state, cached gain."""

    def __init__(self, cfg: LoopConfig, stack: HankelStack):
        self.cfg = cfg
        self.stack = stack
        self.state = None
        self.gain = None
        self.col_H = stack.col_H
        mode = _SVD_MODE.get(cfg.algorithm)
        if mode is not None:
            self.state = init_state(stack.H, cfg.rank_tol, mode)
            if cfg.algorithm == EFFICIENT_SPC_ALG6:
                self.gain = spc_gain(transformed_stack(self.state, stack), cfg.rank_tol)

    def update(self, a):
        alg = self.cfg.algorithm
        if alg not in (ADAPTIVE_SLIDE, BASELINE_SLIDE):
            self.col_H += 1
        if alg == BASELINE_ALG1:
            self.stack = append_column(self.stack, a)
        elif alg == BASELINE_FORGET:
            st = self.stack
            self.stack = append_column(HankelStack(self.cfg.alpha * st.H, st.n_init, st.n_pred, st.n_u, st.n_y), a)
        elif alg == BASELINE_SLIDE:
            st = self.stack
            self.stack = append_column(HankelStack(st.H[:, 1:], st.n_init, st.n_pred, st.n_u, st.n_y), a)
        elif alg == ADAPTIVE_FORGET:
            self.state = forget_and_append(self.state, self.cfg.alpha, a)
        elif alg == ADAPTIVE_SLIDE:
            self.state = downdate_and_append(self.state, a)
        else:
            self.state = append_update(self.state, a)
            if alg == EFFICIENT_SPC_ALG6:
                self.gain = spc_gain(transformed_stack(self.state, self.stack), self.cfg.rank_tol)

    def solve(self, y_init, u_init, ref, warm) -> ControlDecision:
        ctl = self.cfg.controller
        if self.gain is not None:
            return solve_gain_controller(self.gain, ctl, y_init, u_init, ref, warm=warm)
        if self.state is not None:
            return solve_l2_deepc(self.state, ctl, y_init, u_init, ref, repr="lowdim", warm=warm)
        return solve_l2_deepc(self.stack, ctl, y_init, u_init, ref, repr="full", warm=warm)

    @property
    def rank(self) -> int:
        return self.state.r if self.state is not None else -1


def run_closed_loop(sys: InnovationLti, cfg: LoopConfig, innovations=None,
                    prior: SignalLog | None = None) -> TrajectoryRecord:
    """Run one receding-horizon loop.

    Each step: append the most recent ``L``-step window (only once it lies
    entirely after the bootstrap), refresh the data structure, solve the
    controller with the last ``n_init`` samples, apply the first input.

    ``innovations`` optionally overrides ``(bootstrap_u, e)`` from
    :func:`loop_innovations`. ``prior`` supplies the initial data from a separate
    experiment instead; the plant then starts at rest with a zero init window
    and only ``e[bootstrap:]`` is used. A solver failure stops the loop; the
    record is truncated to the completed steps and carries ``failed_step``/``error``.
    """
    ctl = cfg.controller
    n_init, L = ctl.n_init, cfg.L
    u_boot, e = loop_innovations(sys, cfg) if innovations is None else innovations
    u_boot = np.asarray(u_boot, dtype=float).reshape(cfg.bootstrap, sys.n_u)
    e = np.asarray(e, dtype=float).reshape(cfg.bootstrap + cfg.steps, sys.n_y)

    if prior is None:
        pre, pe_input, n_data = cfg.bootstrap, u_boot, cfg.bootstrap
        plant = _Plant(sys, e)
    else:
        pre, pe_input, n_data = n_init, prior.u, prior.T
        plant = _Plant(sys, e[cfg.bootstrap:])
    if n_data < L + sys.n_x:
        warnings.warn(f"initial data of {n_data} samples is shorter than L + n_x = {L + sys.n_x}", stacklevel=2)
    is_pe, smin = check_persistent_excitation(pe_input, min(L + sys.n_x, n_data), cfg.rank_tol)
    if not is_pe:
        warnings.warn(f"initial input is not persistently exciting (min singular value {smin:.2e})", stacklevel=2)

    T = pre + cfg.steps
    u_hist = np.zeros((T, sys.n_u))
    y_hist = np.zeros((T, sys.n_y))
    if prior is None:
        for t in range(pre):
            u_hist[t] = u_boot[t]
            y_hist[t] = plant.step(u_boot[t])
        stack = stack_and_partition(SignalLog(u_hist[:pre], y_hist[:pre]), n_init, ctl.n_pred)
    else:
        stack = stack_and_partition(prior, n_init, ctl.n_pred)
    data = _Data(cfg, stack)

    n = cfg.steps
    rec = dict(update_time=np.zeros(n), solve_time=np.zeros(n), objective=np.zeros(n), rank=np.zeros(n, int),
               col_H=np.zeros(n, int), kkt_residual=np.zeros(n), reference=np.zeros(n))
    warm = None
    failed, err = None, None
    for k in range(n):
        t = pre + k
        try:
            t0 = time.perf_counter()
            if t - L >= pre:
                data.update(window_vector(y_hist[t - L:t], u_hist[t - L:t]))
            t1 = time.perf_counter()
            ref = cfg.reference_at(k)
            d = data.solve(y_hist[t - n_init:t], u_hist[t - n_init:t], ref, warm if cfg.warm_start else None)
            t2 = time.perf_counter()
        except RdeepcError as exc:
            failed, err = k, f"{type(exc).__name__}: {exc}"
            log.error("step %d failed: %s", k, err)
            break
        if not d.converged:
            log.warning("step %d: QP hit its iteration limit (kkt %.2e)", k, d.kkt_residual)
        warm = d
        u_hist[t] = d.u_now
        y_hist[t] = plant.step(d.u_now)
        rec["update_time"][k], rec["solve_time"][k] = t1 - t0, t2 - t1
        rec["objective"][k], rec["kkt_residual"][k] = d.objective_value, d.kkt_residual
        rec["rank"][k], rec["col_H"][k], rec["reference"][k] = data.rank, data.col_H, ref
        log.debug("step %d: u=%s y=%s col_H=%d", k, d.u_now, y_hist[t], data.col_H)

    done = n if failed is None else failed
    out = TrajectoryRecord(cfg.algorithm, cfg.seed, u=u_hist[pre:pre + n], y=y_hist[pre:pre + n],
                           bootstrap_u=u_hist[:pre], bootstrap_y=y_hist[:pre], failed_step=failed, error=err, **rec)
    return out if failed is None else out.truncated(done)


# --------------------------------------------------------------------------- consistency

OPEN_LOOP, CLOSED_LOOP = "open_loop", "closed_loop"
METHODS = ("SPC", "DDP1", "DDP2")
BLOCKS = ("K_y_init", "K_u_init", "K_u_pred", "total")


@dataclass(frozen=True)
class ConsistencyConfig:
    """Data collection for predictor consistency curves.

    Closed-loop data comes from LQ state feedback on the one-step-ahead
    predictor state (so ``u_t`` uses outputs up to ``t-1``) plus white dither.
    """

    n_init: int = 50
    n_pred: int = 50
    checkpoints: tuple = (500, 1000, 2000, 5000)
    input_var: float = 1.0
    feedback_weight: float = 100.0
    dither_var: float = 1.0
    svd_source: str = "fresh"  # "fresh" SVD at checkpoints, or "stream" through svdstream
    rank_tol: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        cps = tuple(int(c) for c in self.checkpoints)
        if not cps or any(c < 1 for c in cps) or list(cps) != sorted(set(cps)):
            raise InvalidInput("checkpoints must be positive and strictly increasing")
        object.__setattr__(self, "checkpoints", cps)
        if self.n_init < 1 or self.n_pred < 1:
            raise InvalidInput("horizons must be positive")
        if self.svd_source not in ("fresh", "stream"):
            raise InvalidInput("svd_source must be 'fresh' or 'stream'")
        if self.feedback_weight <= 0 or self.dither_var < 0 or self.input_var <= 0:
            raise InvalidInput("feedback_weight and input_var must be positive, dither_var nonnegative")

    @property
    def L(self) -> int:
        return self.n_init + self.n_pred


def lq_feedback_gain(sys: InnovationLti, weight: float) -> np.ndarray:
    """Infinite-horizon LQ gain for ``sum ||y||^2 + weight ||u||^2``."""
    Q = sys.C.T @ sys.C
    R = weight * np.eye(sys.n_u)
    X = sla.solve_discrete_are(sys.A, sys.B, Q, R)
    return np.linalg.solve(R + sys.B.T @ X @ sys.B, sys.B.T @ X @ sys.A)


def collect_data(sys: InnovationLti, mode: str, T: int, rng: np.random.Generator,
                 cfg: ConsistencyConfig) -> SignalLog:
    """``T`` samples of open-loop (white input) or closed-loop (delayed feedback) data."""
    e = sys.innovations(T, rng)
    if mode == OPEN_LOOP:
        u = np.sqrt(cfg.input_var) * rng.standard_normal((T, sys.n_u))
        x = np.zeros(sys.n_x)
        y = np.empty((T, sys.n_y))
        for t in range(T):
            y[t] = sys.C @ x + sys.D @ u[t] + e[t]
            x = sys.A @ x + sys.B @ u[t] + sys.K @ e[t]
        return SignalLog(u, y)
    if mode != CLOSED_LOOP:
        raise InvalidInput(f"mode must be {OPEN_LOOP!r} or {CLOSED_LOOP!r}")
    F = lq_feedback_gain(sys, cfg.feedback_weight)
    w = np.sqrt(cfg.dither_var) * rng.standard_normal((T, sys.n_u))
    x = np.zeros(sys.n_x)
    xh = np.zeros(sys.n_x)  # predictor state, built from y_0 .. y_{t-1}
    u = np.empty((T, sys.n_u))
    y = np.empty((T, sys.n_y))
    for t in range(T):
        u[t] = -F @ xh + w[t]
        y[t] = sys.C @ x + sys.D @ u[t] + e[t]
        x = sys.A @ x + sys.B @ u[t] + sys.K @ e[t]
        xh = sys.A @ xh + sys.B @ u[t] + sys.K @ (y[t] - sys.C @ xh - sys.D @ u[t])
    return SignalLog(u, y)


def predictor_errors(est: PredictorMatrices, truth: PredictorMatrices) -> dict:
    """Frobenius error per block, plus ``total`` over the stacked matrix."""
    out = {}
    for name, a in est.blocks().items():
        out[name] = float(np.linalg.norm(a - truth.blocks()[name]))
    out["total"] = float(np.sqrt(sum(v * v for v in out.values())))
    return out


def _reduced_stacks(log_: SignalLog, cfg: ConsistencyConfig):
    """Yield ``(col_H, raw_stack, H_bar_stack, H_bar_one_step)`` at each checkpoint."""
    L = cfg.L
    last = cfg.checkpoints[-1]
    if cfg.svd_source == "fresh":
        for c in cfg.checkpoints:
            sub = SignalLog(log_.u[:c + L - 1], log_.y[:c + L - 1])
            st = stack_and_partition(sub, cfg.n_init, cfg.n_pred)
            st1 = stack_and_partition(sub, cfg.n_init, 1)
            yield c, st, reduce_stack(st, cfg.rank_tol), reduce_stack(st1, cfg.rank_tol)
        return
    full = stack_and_partition(SignalLog(log_.u[:last + L - 1], log_.y[:last + L - 1]), cfg.n_init, cfg.n_pred)
    one = stack_and_partition(SignalLog(log_.u[:last + L - 1], log_.y[:last + L - 1]), cfg.n_init, 1)
    # the one-step stack has n_pred - 1 more columns over the same samples
    extra = cfg.n_pred - 1
    s_full = init_state(full.H[:, :0], cfg.rank_tol)
    s_one = init_state(one.H[:, :0], cfg.rank_tol)
    done = 0
    for c in cfg.checkpoints:
        for j in range(done, c):
            s_full = append_update(s_full, full.H[:, j])
        for j in range(done + (extra if done else 0), c + extra):
            s_one = append_update(s_one, one.H[:, j])
        done = c
        raw = HankelStack(full.H[:, :c], cfg.n_init, cfg.n_pred, full.n_u, full.n_y)
        yield c, raw, transformed_stack(s_full, full), transformed_stack(s_one, one)


def consistency_rows_for_seed(sys: InnovationLti, mode: str, seed: int, cfg: ConsistencyConfig,
                              truth: PredictorMatrices | None = None) -> list:
    """Rows ``(col_H, method, block, frobenius_error, seed)`` for one data record."""
    if truth is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            truth = ground_truth_predictor(sys, cfg.n_init, cfg.n_pred)
    rng = np.random.default_rng(seed)
    data = collect_data(sys, mode, cfg.checkpoints[-1] + cfg.L - 1, rng, cfg)
    rows = []
    for c, raw, red, red1 in _reduced_stacks(data, cfg):
        est = {
            "SPC": spc_gain(raw, cfg.rank_tol).matrices(),
            "DDP1": extract_predictor_matrices("spc", red, rank_tol=cfg.rank_tol),
            "DDP2": extract_predictor_matrices("one_step_successive", red1, n_pred=cfg.n_pred, rank_tol=cfg.rank_tol),
        }
        for method in METHODS:
            for block, v in predictor_errors(est[method], truth).items():
                rows.append((c, method, block, v, seed))
        log.info("%s seed %d col_H %d done", mode, seed, c)
    return rows


@dataclass
class ConsistencyResult:
    mode: str
    rows: list  # (col_H, method, block, frobenius_error, seed)

    def curve(self, method: str, block: str = "total") -> tuple:
        """Seed-averaged error per checkpoint: ``(col_H array, mean error array)``."""
        sel = [(c, v) for c, m, b, v, _ in self.rows if m == method and b == block]
        if not sel:
            raise InvalidInput(f"no rows for {method}/{block}")
        cols = np.array(sorted({c for c, _ in sel}))
        means = np.array([np.mean([v for c2, v in sel if c2 == c]) for c in cols])
        return cols, means


def run_consistency_experiment(sys: InnovationLti, mode: str, checkpoints=None, seeds=range(10),
                               cfg: ConsistencyConfig | None = None, executor=None) -> ConsistencyResult:
    """Error of SPC, DDP1 and DDP2 predictors against the exact predictor.

    ``executor`` (e.g. a process pool) parallelizes over seeds; rows are merged
    in seed order either way.
    """
    cfg = cfg or ConsistencyConfig()
    if checkpoints is not None:
        cfg = ConsistencyConfig(**{**cfg.__dict__, "checkpoints": tuple(checkpoints)})
    if mode not in (OPEN_LOOP, CLOSED_LOOP):
        raise InvalidInput(f"mode must be {OPEN_LOOP!r} or {CLOSED_LOOP!r}")
    rho = sys.predictor_spectral_radius()
    if rho >= 1:
        warnings.warn(f"A - KC is not stable (spectral radius {rho:.3f}); consistency is not expected", stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        truth = ground_truth_predictor(sys, cfg.n_init, cfg.n_pred)
    seeds = list(seeds)
    if executor is None:
        parts = [consistency_rows_for_seed(sys, mode, s, cfg, truth) for s in seeds]
    else:
        futures = [executor.submit(consistency_rows_for_seed, sys, mode, s, cfg, truth) for s in seeds]
        parts = [f.result() for f in futures]
    return ConsistencyResult(mode, [r for p in parts for r in p])
