"""Data-driven output predictors built on (possibly transformed) Hankel blocks.

Every predictor here is linear in the request ``[y_init; u_init; u_pred]``.
"Transformed" blocks are ``H_bar = U1 diag(sigma)`` partitioned exactly like
the raw stack; since ``H_bar H_bar' = H H'`` they yield the same predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from rdeepc.errors import InvalidInput
from rdeepc.hankel import HankelStack
from rdeepc.ltisim import PredictorMatrices
from rdeepc.numkit import DEFAULT_RANK_TOL, QpProblem, pinv, solve_qp

FORMS = ("pinv", "constrained", "limit", "lowdim_constrained", "lowdim_limit", "lowdim_pinv", "min_norm")
LOWDIM_FORMS = ("lowdim_constrained", "lowdim_limit", "lowdim_pinv")

# ridge weight of the lambda -> 0+ form, relative to sigma_max^2 of the regressor
LIMIT_RIDGE = 1e-12
# iterated-Tikhonov sweeps; the residual bias shrinks like (lam / sigma_min^2)^sweeps
LIMIT_SWEEPS = 4


@dataclass(frozen=True)
class PredictionRequest:
    y_init: np.ndarray
    u_init: np.ndarray
    u_pred: np.ndarray

    def __post_init__(self):
        for name in ("y_init", "u_init", "u_pred"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise InvalidInput(f"{name} contains non-finite entries")
            object.__setattr__(self, name, v)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.y_init, self.u_init, self.u_pred])

    @classmethod
    def from_vector(cls, v, n_init: int, n_pred: int, n_u: int, n_y: int) -> "PredictionRequest":
        v = np.asarray(v, dtype=float).reshape(-1)
        a, b = n_y * n_init, n_y * n_init + n_u * n_init
        if v.size != b + n_u * n_pred:
            raise InvalidInput("request vector has the wrong length")
        return cls(v[:a], v[a:b], v[b:])


@dataclass(frozen=True)
class SpcGain:
    """``y_pred = K @ [y_init; u_init; u_pred]``."""

    K: np.ndarray
    n_init: int
    n_pred: int
    n_u: int
    n_y: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        m = (self.n_y + self.n_u) * self.n_init + self.n_u * self.n_pred
        if K.shape != (self.n_y * self.n_pred, m):
            raise InvalidInput(f"gain has shape {K.shape}, expected {(self.n_y * self.n_pred, m)}")
        if not np.all(np.isfinite(K)):
            raise InvalidInput("gain contains non-finite entries")
        object.__setattr__(self, "K", K)

    def predict(self, req: PredictionRequest) -> np.ndarray:
        return self.K @ req.vector()

    def matrices(self) -> PredictorMatrices:
        a = self.n_y * self.n_init
        b = a + self.n_u * self.n_init
        return PredictorMatrices(self.K[:, :a], self.K[:, a:b], self.K[:, b:])


def _check_request(blocks: HankelStack, req: PredictionRequest):
    want = (blocks.n_y * blocks.n_init, blocks.n_u * blocks.n_init, blocks.n_u * blocks.n_pred)
    got = (req.y_init.size, req.u_init.size, req.u_pred.size)
    if want != got:
        raise InvalidInput(f"request sizes {got} do not match the stack partition {want}")


def _ridge_limit(Z, b, lam, sweeps=LIMIT_SWEEPS):
    """``lim_{lam->0+} (Z'Z + lam I)^{-1} Z' b`` by iterated Tikhonov refinement.

    Each sweep solves the ridge system for the current residual; starting at
    zero keeps the iterate in ``range(Z')`` so it converges to ``Z^+ b``.
    """
    m, n = Z.shape
    primal = n <= m
    fac = sla.cho_factor(Z.T @ Z + lam * np.eye(n) if primal else Z @ Z.T + lam * np.eye(m))

    def step(r):
        return sla.cho_solve(fac, Z.T @ r) if primal else Z.T @ sla.cho_solve(fac, r)

    g = step(b)
    for _ in range(sweeps - 1):
        g = g + step(b - Z @ g)
    return g


def _coefficients(blocks: HankelStack, b, form: str, rank_tol: float):
    Z = blocks.regressor()
    if form in ("pinv", "lowdim_pinv"):
        return pinv(Z, rank_tol) @ b
    if form in ("constrained", "lowdim_constrained"):
        # minimum-norm point of the normal equations Z'Z g = Z'b (complete orthogonal factorization)
        G = Z.T @ Z
        # rank cutoff on eigenvalues of G; rank_tol**2 alone sits below its rounding floor
        cond = max(rank_tol * rank_tol, 10.0 * G.shape[0] * np.finfo(float).eps)
        g, *_ = sla.lstsq(G, Z.T @ b, cond=cond, lapack_driver="gelsy")
        return g
    if form in ("limit", "lowdim_limit"):
        smax = np.linalg.norm(Z, 2) if Z.size else 0.0
        lam = LIMIT_RIDGE * max(smax * smax, np.finfo(float).tiny)
        return _ridge_limit(Z, b, lam)
    if form == "min_norm":
        return _min_norm_qp(blocks, b)
    raise InvalidInput(f"unknown prediction form {form!r}; choose from {FORMS}")


def _min_norm_qp(blocks: HankelStack, b):
    """min ||g||^2  s.t.  [H_y,init; H_u] g = b, solved as a QP (requires feasibility)."""
    Z = blocks.regressor()
    n = Z.shape[1]
    res = solve_qp(QpProblem(P=2.0 * np.eye(n), q=np.zeros(n), Aeq=Z, beq=b))
    return res.x


def pinv_predict(blocks: HankelStack, req: PredictionRequest, form: str = "pinv",
                 rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Pseudoinverse output prediction ``H_y,pred [H_y,init; H_u]^+ [y_init; u_init; u_pred]``.

    ``form`` selects an equivalent computation. The ``lowdim_*`` forms expect a
    transformed stack (at most ``row_H`` columns). ``min_norm`` solves the
    equality-constrained minimum-norm problem and needs a full-row-rank regressor.
    """
    if form not in FORMS:
        raise InvalidInput(f"unknown prediction form {form!r}; choose from {FORMS}")
    _check_request(blocks, req)
    if form in LOWDIM_FORMS and blocks.col_H > blocks.row_H:
        raise InvalidInput("low-dimensional forms need a transformed stack with col_H <= row_H")
    b = req.vector()
    if blocks.col_H == 0:
        return np.zeros(blocks.n_y * blocks.n_pred)
    g = _coefficients(blocks, b, form, rank_tol)
    return blocks.H_y_pred @ g


def spc_gain(blocks: HankelStack, rank_tol: float = DEFAULT_RANK_TOL) -> SpcGain:
    """``K = H_y,pred [H_y,init; H_u]^+`` from raw or transformed blocks."""
    Z = blocks.regressor()
    K = blocks.H_y_pred @ pinv(Z, rank_tol) if blocks.col_H else np.zeros((blocks.H_y_pred.shape[0], Z.shape[0]))
    return SpcGain(K, blocks.n_init, blocks.n_pred, blocks.n_u, blocks.n_y)


def _one_step_gain(blocks: HankelStack, rank_tol: float) -> SpcGain:
    if blocks.n_pred != 1:
        raise InvalidInput(f"successive prediction needs a depth n_init+1 stack (n_pred=1), got n_pred={blocks.n_pred}")
    return spc_gain(blocks, rank_tol)


def successive_one_step_predict(blocks: HankelStack, req: PredictionRequest,
                                rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Multi-step prediction by repeating the one-step pseudoinverse predictor.

    ``blocks`` has prediction depth 1. After each step the init windows slide
    by one sample: the oldest sample drops out, the newest prediction (and the
    matching planned input) enters.
    """
    gain = _one_step_gain(blocks, rank_tol)
    ny, nu, n_init = blocks.n_y, blocks.n_u, blocks.n_init
    if req.y_init.size != ny * n_init or req.u_init.size != nu * n_init or req.u_pred.size % nu:
        raise InvalidInput("request does not match the one-step stack partition")
    n_pred = req.u_pred.size // nu
    y_win = req.y_init.reshape(n_init, ny)
    u_win = req.u_init.reshape(n_init, nu)
    u_fut = req.u_pred.reshape(n_pred, nu)
    Ky, Ku, Kp = gain.matrices().K_y_init, gain.matrices().K_u_init, gain.matrices().K_u_pred
    out = np.empty((n_pred, ny))
    for i in range(n_pred):
        yi = Ky @ y_win.ravel() + Ku @ u_win.ravel() + Kp @ u_fut[i]
        out[i] = yi
        y_win = np.vstack([y_win[1:], yi])
        u_win = np.vstack([u_win[1:], u_fut[i]])
    return out.ravel()


def successive_matrices(blocks: HankelStack, n_pred: int, rank_tol: float = DEFAULT_RANK_TOL) -> PredictorMatrices:
    """Explicit form of :func:`successive_one_step_predict` by forward recursion.

    Each window entry is tracked as a row-block of coefficients on the request
    vector; step ``i`` combines them through the one-step gain.
    """
    mats = _one_step_gain(blocks, rank_tol).matrices()
    ny, nu, n_init = blocks.n_y, blocks.n_u, blocks.n_init
    m = (ny + nu) * n_init + nu * n_pred
    I = np.eye(m)
    y_win = [I[k * ny:(k + 1) * ny] for k in range(n_init)]
    off = ny * n_init
    u_win = [I[off + k * nu: off + (k + 1) * nu] for k in range(n_init)]
    off += nu * n_init
    rows = []
    for i in range(n_pred):
        u_i = I[off + i * nu: off + (i + 1) * nu]
        yi = mats.K_y_init @ np.vstack(y_win) + mats.K_u_init @ np.vstack(u_win) + mats.K_u_pred @ u_i
        rows.append(yi)
        y_win = y_win[1:] + [yi]
        u_win = u_win[1:] + [u_i]
    K = np.vstack(rows)
    a, b = ny * n_init, (ny + nu) * n_init
    return PredictorMatrices(K[:, :a], K[:, a:b], K[:, b:])


def probe_matrices(predict, n_init: int, n_pred: int, n_u: int, n_y: int) -> PredictorMatrices:
    """Identify a linear predictor ``predict(PredictionRequest) -> y_pred`` column by column."""
    m = (n_y + n_u) * n_init + n_u * n_pred
    cols = [np.asarray(predict(PredictionRequest.from_vector(e, n_init, n_pred, n_u, n_y)), dtype=float)
            for e in np.eye(m)]
    K = np.column_stack(cols) if cols else np.zeros((n_y * n_pred, 0))
    a, b = n_y * n_init, (n_y + n_u) * n_init
    return PredictorMatrices(K[:, :a], K[:, a:b], K[:, b:])


def extract_predictor_matrices(predictor: str, blocks: HankelStack, n_pred: int | None = None,
                               rank_tol: float = DEFAULT_RANK_TOL) -> PredictorMatrices:
    """Explicit ``(K_y_init, K_u_init, K_u_pred)`` of a data-driven predictor.

    ``predictor`` is ``"spc"`` (full-horizon pseudoinverse, also the bi-level
    DeePC predictor) or ``"one_step_successive"``; the latter needs ``n_pred``.
    """
    if predictor == "spc":
        return spc_gain(blocks, rank_tol).matrices()
    if predictor == "one_step_successive":
        if n_pred is None or n_pred < 1:
            raise InvalidInput("one_step_successive extraction needs a positive n_pred")
        return successive_matrices(blocks, n_pred, rank_tol)
    raise InvalidInput(f"unknown predictor {predictor!r}")
