"""Receding-horizon controllers assembled as dense QPs.

Decision vector layout, shared by every controller::

    x = [coeff; sigma; u_pred; y_pred]

``coeff`` is ``g`` (one entry per Hankel column), ``g_bar`` (one per retained
singular value) or empty for gain-based controllers; ``sigma`` is empty when
no slack is used. The cost is ``sum_k q ||y_k - ref_k||^2 + r ||u_k||^2`` plus
the regularizers, written as ``0.5 x'Px + q'x + const``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rdeepc.errors import InvalidInput
from rdeepc.hankel import HankelStack
from rdeepc.ltisim import PredictorMatrices
from rdeepc.numkit import DEFAULT_QP_TOL, QpProblem, QpResult, solve_qp
from rdeepc.predictors import SpcGain
from rdeepc.svdstream import SvdState, reduce_stack, transformed_hankel

SLACK_Y_INIT, SLACK_FULL = "y_init", "full"
# weight put on coeff when lambda_g == 0, so that the minimizer is unique (min-norm tie-break)
COEFF_TIE_BREAK = 1e-10


@dataclass(frozen=True)
class DeepcConfig:
    n_init: int = 10
    n_pred: int = 10
    lambda_sigma: float = 1e6
    lambda_g: float = 1e4
    q_track: float = 1.0
    r_input: float = 1e-3
    u_min: float | tuple = -10.0
    u_max: float | tuple = 10.0
    y_min: float | tuple | None = None
    y_max: float | tuple | None = None
    reference: float | None = None
    slack: str = SLACK_Y_INIT
    qp_tol: float = DEFAULT_QP_TOL

    def __post_init__(self):
        if self.n_init < 1 or self.n_pred < 1:
            raise InvalidInput("horizons must be positive")
        for name in ("lambda_sigma", "lambda_g", "q_track", "r_input"):
            if getattr(self, name) < 0:
                raise InvalidInput(f"{name} must be nonnegative")
        if np.any(np.asarray(self.u_min, float) > np.asarray(self.u_max, float)):
            raise InvalidInput("empty input box")
        if self.y_min is not None and self.y_max is not None and np.any(
                np.asarray(self.y_min, float) > np.asarray(self.y_max, float)):
            raise InvalidInput("empty output box")
        if self.slack not in (SLACK_Y_INIT, SLACK_FULL):
            raise InvalidInput(f"slack must be {SLACK_Y_INIT!r} or {SLACK_FULL!r}")


@dataclass
class ControlDecision:
    u_pred_opt: np.ndarray
    y_pred_opt: np.ndarray
    coeff: np.ndarray
    sigma: np.ndarray
    objective_value: float
    kkt_residual: float
    active: list = field(default_factory=list)  # [(block, local index, +1 lower / -1 upper)]
    iterations: int = 0
    converged: bool = True
    n_u: int = 1

    @property
    def u_now(self) -> np.ndarray:
        """First planned input, the one applied to the plant."""
        return self.u_pred_opt[: self.n_u]


@dataclass(frozen=True)
class QpLayout:
    """Offsets of the decision blocks in ``x``."""

    n_coeff: int
    n_sigma: int
    n_u: int  # total planned-input entries
    n_y: int  # total predicted-output entries

    @property
    def slices(self) -> dict:
        a = self.n_coeff
        b = a + self.n_sigma
        c = b + self.n_u
        return {"coeff": slice(0, a), "sigma": slice(a, b), "u": slice(b, c), "y": slice(c, c + self.n_y)}

    @property
    def size(self) -> int:
        return self.n_coeff + self.n_sigma + self.n_u + self.n_y


def _vec(v, name, size):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != size:
        raise InvalidInput(f"{name} must have {size} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return v


def _reference(cfg: DeepcConfig, reference, size):
    if reference is None:
        reference = cfg.reference
    if reference is None:
        raise InvalidInput("no reference given (argument or DeepcConfig.reference)")
    ref = np.asarray(reference, dtype=float).reshape(-1)
    if ref.size == 1:
        ref = np.full(size, float(ref[0]))
    return _vec(ref, "reference", size)


def _box(lo, hi, per_step, steps):
    lo = -np.inf if lo is None else lo
    hi = np.inf if hi is None else hi
    lo = np.broadcast_to(np.asarray(lo, float), (per_step,))
    hi = np.broadcast_to(np.asarray(hi, float), (per_step,))
    return np.tile(lo, steps), np.tile(hi, steps)


def _cost_and_bounds(layout: QpLayout, cfg: DeepcConfig, ref, coeff_weight, n_u, n_y):
    sl = layout.slices
    diag = np.zeros(layout.size)
    diag[sl["coeff"]] = 2.0 * coeff_weight
    diag[sl["sigma"]] = 2.0 * cfg.lambda_sigma
    diag[sl["u"]] = 2.0 * cfg.r_input
    diag[sl["y"]] = 2.0 * cfg.q_track
    q = np.zeros(layout.size)
    q[sl["y"]] = -2.0 * cfg.q_track * ref
    lb = np.full(layout.size, -np.inf)
    ub = np.full(layout.size, np.inf)
    lb[sl["u"]], ub[sl["u"]] = _box(cfg.u_min, cfg.u_max, n_u, cfg.n_pred)
    lb[sl["y"]], ub[sl["y"]] = _box(cfg.y_min, cfg.y_max, n_y, cfg.n_pred)
    return np.diag(diag), q, lb, ub


def assemble_deepc_qp(blocks: HankelStack, cfg: DeepcConfig, y_init, u_init, reference=None):
    """QP of the regularized DeePC problem on ``blocks`` (raw ``H`` or transformed ``H_bar``).

    Equalities: ``H coeff - S sigma - [0; y_pred; 0; u_pred] = [y_init; 0; u_init; 0]``
    where ``S`` selects the y_init rows (or all rows with ``slack="full"``).
    """
    if (blocks.n_init, blocks.n_pred) != (cfg.n_init, cfg.n_pred):
        raise InvalidInput("stack horizons differ from the controller configuration")
    ny, nu = blocks.n_y, blocks.n_u
    y_init = _vec(y_init, "y_init", ny * cfg.n_init)
    u_init = _vec(u_init, "u_init", nu * cfg.n_init)
    ref = _reference(cfg, reference, ny * cfg.n_pred)
    rows = blocks.rows
    n_sigma = ny * cfg.n_init if cfg.slack == SLACK_Y_INIT else blocks.row_H
    layout = QpLayout(blocks.col_H, n_sigma, nu * cfg.n_pred, ny * cfg.n_pred)
    sl = layout.slices

    Aeq = np.zeros((blocks.row_H, layout.size))
    Aeq[:, sl["coeff"]] = blocks.H
    if cfg.slack == SLACK_Y_INIT:
        Aeq[rows["y_init"], sl["sigma"]] = -np.eye(n_sigma)
    else:
        Aeq[:, sl["sigma"]] = -np.eye(n_sigma)
    Aeq[rows["y_pred"], sl["y"]] = -np.eye(layout.n_y)
    Aeq[rows["u_pred"], sl["u"]] = -np.eye(layout.n_u)
    beq = np.zeros(blocks.row_H)
    beq[rows["y_init"]] = y_init
    beq[rows["u_init"]] = u_init

    weight = cfg.lambda_g if cfg.lambda_g > 0 else COEFF_TIE_BREAK * max(1.0, cfg.q_track, cfg.r_input)
    P, q, lb, ub = _cost_and_bounds(layout, cfg, ref, weight, nu, ny)
    return QpProblem(P, q, Aeq, beq, lb, ub, tol=cfg.qp_tol), layout, float(cfg.q_track * ref @ ref)


def _gain_blocks(gain) -> PredictorMatrices:
    if isinstance(gain, SpcGain):
        return gain.matrices()
    if isinstance(gain, PredictorMatrices):
        return gain
    raise InvalidInput("gain must be an SpcGain or PredictorMatrices")


def assemble_gain_qp(gain, cfg: DeepcConfig, y_init, u_init, reference=None):
    """QP of ``min J  s.t.  y_pred = K_y,init y_init + K_u,init u_init + K_u,pred u_pred``."""
    pm = _gain_blocks(gain)
    n_ypred, n_upred = pm.K_u_pred.shape
    if n_ypred % cfg.n_pred or n_upred % cfg.n_pred:
        raise InvalidInput("gain dimensions do not match n_pred")
    ny, nu = n_ypred // cfg.n_pred, n_upred // cfg.n_pred
    y_init = _vec(y_init, "y_init", pm.K_y_init.shape[1])
    u_init = _vec(u_init, "u_init", pm.K_u_init.shape[1])
    if y_init.size != ny * cfg.n_init or u_init.size != nu * cfg.n_init:
        raise InvalidInput("gain dimensions do not match n_init")
    ref = _reference(cfg, reference, n_ypred)
    layout = QpLayout(0, 0, n_upred, n_ypred)
    sl = layout.slices
    Aeq = np.zeros((n_ypred, layout.size))
    Aeq[:, sl["u"]] = -pm.K_u_pred
    Aeq[:, sl["y"]] = np.eye(n_ypred)
    beq = pm.K_y_init @ y_init + pm.K_u_init @ u_init
    P, q, lb, ub = _cost_and_bounds(layout, cfg, ref, 0.0, nu, ny)
    return QpProblem(P, q, Aeq, beq, lb, ub, tol=cfg.qp_tol), layout, float(cfg.q_track * ref @ ref)


def _warm_indices(layout: QpLayout, warm):
    if warm is None:
        return None
    sl = layout.slices
    out = []
    for block, k, s in warm.active:
        span = sl[block]
        if 0 <= k < span.stop - span.start:
            out.append((span.start + k, s))
    return out


def _decision(res: QpResult, p: QpProblem, layout: QpLayout, const: float, n_u: int) -> ControlDecision:
    sl = layout.slices
    x = res.x
    active = []
    for i, s in res.active:
        for name, span in sl.items():
            if span.start <= i < span.stop:
                active.append((name, i - span.start, s))
    obj = float(0.5 * x @ p.P @ x + p.q @ x + const)
    return ControlDecision(
        u_pred_opt=x[sl["u"]].copy(), y_pred_opt=x[sl["y"]].copy(), coeff=x[sl["coeff"]].copy(),
        sigma=x[sl["sigma"]].copy(), objective_value=obj, kkt_residual=res.kkt_residual,
        active=active, iterations=res.iterations, converged=res.converged, n_u=n_u)


def _as_blocks(data, cfg: DeepcConfig, y_init, u_init, repr: str) -> HankelStack:
    if isinstance(data, SvdState):
        n_y = np.size(y_init) // cfg.n_init
        n_u = np.size(u_init) // cfg.n_init
        H_bar = transformed_hankel(data)
        return HankelStack(H_bar, cfg.n_init, cfg.n_pred, n_u, n_y)
    if not isinstance(data, HankelStack):
        raise InvalidInput("data must be a HankelStack or an SvdState")
    if repr == "lowdim" and data.col_H > data.row_H:
        return reduce_stack(data)
    return data


def solve_l2_deepc(data, cfg: DeepcConfig, y_init, u_init, reference=None, repr: str = "full",
                   warm: ControlDecision | None = None) -> ControlDecision:
    """Regularized DeePC step.

    ``repr="full"`` optimizes over ``g`` on the raw stack; ``repr="lowdim"``
    optimizes over ``g_bar`` on ``H_bar = U1 diag(sigma)`` (computed here from a
    raw stack, or taken from an :class:`SvdState`). Both return the same
    ``(u_pred_opt, y_pred_opt)``.
    """
    if repr not in ("full", "lowdim"):
        raise InvalidInput("repr must be 'full' or 'lowdim'")
    if isinstance(data, SvdState) and repr == "full":
        raise InvalidInput("an SvdState only supports repr='lowdim'")
    blocks = _as_blocks(data, cfg, y_init, u_init, repr)
    if blocks.col_H < 1:
        raise InvalidInput("data has no columns")
    p, layout, const = assemble_deepc_qp(blocks, cfg, y_init, u_init, reference)
    res = solve_qp(p, warm_active=_warm_indices(layout, warm))
    return _decision(res, p, layout, const, blocks.n_u)


def solve_gain_controller(gain, cfg: DeepcConfig, y_init, u_init, reference=None,
                          warm: ControlDecision | None = None) -> ControlDecision:
    """Predictive control with an explicit affine predictor (SPC and the bi-level DeePCs)."""
    p, layout, const = assemble_gain_qp(gain, cfg, y_init, u_init, reference)
    res = solve_qp(p, warm_active=_warm_indices(layout, warm))
    return _decision(res, p, layout, const, layout.n_u // cfg.n_pred)


def assemble_bilevel_kkt_qp(blocks: HankelStack, cfg: DeepcConfig, y_init, u_init, reference=None):
    """Single-level QP of the bi-level DeePC, lower level replaced by its optimality conditions.

    The inner problem ``min ||g||^2 s.t. Z g = [y_init; u_init; u_pred]`` with
    ``Z = [H_y,init; H_u]`` is solved exactly by ``g = Z' lam, Z g = b``. The
    variables are ``[g; lam; u_pred; y_pred]`` (``lam`` takes the slack slot).
    Needs ``Z`` of full row rank.
    """
    ny, nu = blocks.n_y, blocks.n_u
    y_init = _vec(y_init, "y_init", ny * cfg.n_init)
    u_init = _vec(u_init, "u_init", nu * cfg.n_init)
    ref = _reference(cfg, reference, ny * cfg.n_pred)
    Z = blocks.regressor()
    m, n = Z.shape
    layout = QpLayout(n, m, nu * cfg.n_pred, ny * cfg.n_pred)
    sl = layout.slices
    n_upred = layout.n_u
    Aeq = np.zeros((m + n + layout.n_y, layout.size))
    # Z g - [0; 0; u_pred] = [y_init; u_init; 0]
    Aeq[:m, sl["coeff"]] = Z
    Aeq[m - n_upred:m, sl["u"]] = -np.eye(n_upred)
    # g - Z' lam = 0
    Aeq[m:m + n, sl["coeff"]] = np.eye(n)
    Aeq[m:m + n, sl["sigma"]] = -Z.T
    # y_pred - H_y,pred g = 0
    Aeq[m + n:, sl["coeff"]] = -blocks.H_y_pred
    Aeq[m + n:, sl["y"]] = np.eye(layout.n_y)
    beq = np.zeros(Aeq.shape[0])
    beq[:ny * cfg.n_init] = y_init
    beq[ny * cfg.n_init:ny * cfg.n_init + nu * cfg.n_init] = u_init
    P, q, lb, ub = _cost_and_bounds(layout, cfg, ref, 0.0, nu, ny)
    P[sl["sigma"], sl["sigma"]] = 0.0
    return QpProblem(P, q, Aeq, beq, lb, ub, tol=cfg.qp_tol), layout, float(cfg.q_track * ref @ ref)


def solve_bilevel_deepc_kkt(blocks: HankelStack, cfg: DeepcConfig, y_init, u_init, reference=None) -> ControlDecision:
    """Bi-level DeePC with the minimum-norm prediction, solved through its KKT reduction."""
    p, layout, const = assemble_bilevel_kkt_qp(blocks, cfg, y_init, u_init, reference)
    res = solve_qp(p)
    return _decision(res, p, layout, const, blocks.n_u)
