"""Incremental maintenance of the left singular factors of a growing matrix.

Only ``U1`` and ``sigma`` are tracked; the right singular vectors are never
needed because the reduced controllers work with ``H_bar = U1 @ diag(sigma)``,
whose Gram matrix equals ``H @ H.T``.

Three update rules are provided:

* :func:`append_update` - add one column (Brand's update while rank-deficient,
  symmetric rank-one eigen-update once the rank equals the row count).
* :func:`forget_and_append` - scale the tracked matrix by ``alpha`` first.
* :func:`downdate_and_append` - sliding window: drop the oldest column with an
  eigen-downdate, then add the new one. Requires the raw matrix to be stored.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from rdeepc.errors import InvalidInput, InvalidState
from rdeepc.hankel import HankelStack
from rdeepc.numkit import DEFAULT_RANK_TOL, eig_sym, numerical_rank, svd_thin

GROW, FORGET, SLIDE = "grow", "forget", "slide"

REORTH_EVERY = 500
REORTH_DRIFT = 1e-9


@dataclass(frozen=True)
class ForgettingConfig:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput(f"forgetting factor must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class SvdState:
    """Thin SVD factors of the tracked matrix.

    In ``slide`` mode ``U1`` is square and ``sigma`` is zero-padded to ``row_H``
    entries; ``stored_H`` holds the raw window.
    """

    U1: np.ndarray
    sigma: np.ndarray
    rank_tol: float = DEFAULT_RANK_TOL
    mode: str = GROW
    stored_H: np.ndarray | None = None
    append_count: int = 0
    since_reorth: int = 0
    last_downdate_min_eig: float = 0.0

    @property
    def row_H(self) -> int:
        return self.U1.shape[0]

    @property
    def r(self) -> int:
        if self.mode == SLIDE:
            return numerical_rank(self.sigma, self.rank_tol)
        return self.sigma.size

    @property
    def col_H(self) -> int | None:
        return None if self.stored_H is None else self.stored_H.shape[1]


def init_state(H, rank_tol: float = DEFAULT_RANK_TOL, mode: str = GROW) -> SvdState:
    """Factor ``H`` from scratch."""
    if mode not in (GROW, FORGET, SLIDE):
        raise InvalidInput(f"unknown mode {mode!r}")
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or not np.all(np.isfinite(H)):
        raise InvalidInput("H must be a finite 2-D array")
    if mode != SLIDE:
        U1, s, _, _ = svd_thin(H, rank_tol)
        return SvdState(U1=U1, sigma=s, rank_tol=rank_tol, mode=mode)
    m = H.shape[0]
    if H.shape[1]:
        U, s, _ = np.linalg.svd(H, full_matrices=True)
    else:
        U, s = np.eye(m), np.zeros(0)
    sigma = np.zeros(m)
    sigma[: min(m, s.size)] = s[:m]
    return SvdState(U1=U, sigma=sigma, rank_tol=rank_tol, mode=SLIDE, stored_H=H.copy())


def _check_column(state: SvdState, a) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape != (state.row_H,):
        raise InvalidInput(f"column must have {state.row_H} entries, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("column contains non-finite entries")
    return a


def _eig_rank_one(U1, sigma, z, sign):
    """Factor ``U1 (diag(sigma^2) + sign * z z') U1'`` -> new ``(U1, sigma, min_eig)``."""
    C, lam = eig_sym(np.diag(sigma**2) + sign * np.outer(z, z))
    min_eig = float(lam[-1]) if lam.size else 0.0
    return U1 @ C, np.sqrt(np.clip(lam, 0.0, None)), min_eig


def _brand(U1, sigma, a, rank_tol):
    """Column append while ``r < row_H``."""
    r = sigma.size
    m = U1.T @ a
    p = a - U1 @ m
    # second Gram-Schmidt pass keeps the residual orthogonal to U1
    m2 = U1.T @ p
    p = p - U1 @ m2
    m = m + m2
    Ra = float(np.linalg.norm(p))
    smax = float(sigma[0]) if r else 0.0
    grows = Ra > rank_tol * max(smax, float(np.linalg.norm(a)))
    if grows:
        K = np.zeros((r + 1, r + 1))
        K[:r, :r] = np.diag(sigma)
        K[:r, r] = m
        K[r, r] = Ra
        C, sb, _ = np.linalg.svd(K)
        U_new = np.column_stack([U1, p / Ra]) @ C
        return U_new, sb
    K = np.column_stack([np.diag(sigma), m]) if r else np.zeros((0, 1))
    if r == 0:
        return U1, sigma
    C, sb, _ = np.linalg.svd(K, full_matrices=False)
    return U1 @ C, sb


def _maybe_reorthogonalize(state: SvdState) -> SvdState:
    U1 = state.U1
    drift = np.linalg.norm(U1.T @ U1 - np.eye(U1.shape[1]))
    if state.since_reorth < REORTH_EVERY and drift <= REORTH_DRIFT:
        return state
    # refactor U1 diag(sigma): exact for the tracked Gram matrix, restores orthogonality
    U, s, _ = np.linalg.svd(U1 * state.sigma, full_matrices=False)
    if state.mode == SLIDE:
        k = s.size
        Q, _ = np.linalg.qr(np.column_stack([U, np.eye(U1.shape[0])]))
        U_full = np.column_stack([U, Q[:, k:U1.shape[0]]]) if k < U1.shape[0] else U
        sigma = np.zeros(U1.shape[0])
        sigma[:k] = s
        return replace(state, U1=U_full, sigma=sigma, since_reorth=0)
    return replace(state, U1=U, sigma=s, since_reorth=0)


def _truncate(U1, sigma, rank_tol):
    r = numerical_rank(sigma, rank_tol)
    return U1[:, :r], sigma[:r]


def append_update(state: SvdState, a) -> SvdState:
    """Track ``[H a]``."""
    a = _check_column(state, a)
    if state.mode == SLIDE:
        U1, sigma, _ = _eig_rank_one(state.U1, state.sigma, state.U1.T @ a, +1.0)
        stored = np.column_stack([state.stored_H, a])
        new = replace(state, U1=U1, sigma=sigma, stored_H=stored)
    elif state.sigma.size < state.row_H:
        U1, sigma = _brand(state.U1, state.sigma, a, state.rank_tol)
        U1, sigma = _truncate(U1, sigma, state.rank_tol)
        new = replace(state, U1=U1, sigma=sigma)
    else:
        U1, sigma, _ = _eig_rank_one(state.U1, state.sigma, state.U1.T @ a, +1.0)
        new = replace(state, U1=U1, sigma=sigma)
    new = replace(new, append_count=state.append_count + 1, since_reorth=state.since_reorth + 1)
    return _maybe_reorthogonalize(new)


def forget_and_append(state: SvdState, alpha: float, a) -> SvdState:
    """Track ``[alpha * H, a]``."""
    ForgettingConfig(alpha)
    scaled = replace(state, sigma=alpha * state.sigma)
    if state.stored_H is not None:
        scaled = replace(scaled, stored_H=alpha * state.stored_H)
    return append_update(scaled, a)


def downdate_and_append(state: SvdState, a) -> SvdState:
    """Drop the oldest stored column and append ``a`` (sliding window)."""
    if state.mode != SLIDE or state.stored_H is None:
        raise InvalidState("downdating requires a state initialized in slide mode")
    if state.stored_H.shape[1] == 0:
        raise InvalidState("no stored column to remove")
    a = _check_column(state, a)
    b = state.stored_H[:, 0]
    U1, sigma, min_eig = _eig_rank_one(state.U1, state.sigma, state.U1.T @ b, -1.0)
    U1, sigma, _ = _eig_rank_one(U1, sigma, U1.T @ a, +1.0)
    # values under sqrt(m eps) sigma_max are rounding residue of the squared-domain downdate
    floor = np.sqrt(10.0 * sigma.size * np.finfo(float).eps) * (sigma[0] if sigma.size else 0.0)
    sigma = np.where(sigma > floor, sigma, 0.0)
    stored = np.column_stack([state.stored_H[:, 1:], a])
    scale = float(state.sigma[0] ** 2) if state.sigma.size else 1.0
    new = replace(state, U1=U1, sigma=sigma, stored_H=stored,
                  append_count=state.append_count + 1, since_reorth=state.since_reorth + 1,
                  last_downdate_min_eig=min_eig / max(scale, np.finfo(float).tiny))
    return _maybe_reorthogonalize(new)


def transformed_hankel(state: SvdState) -> np.ndarray:
    """``H_bar = U1 diag(sigma)`` restricted to the numerical rank: shape (row_H, r)."""
    r = state.r
    return state.U1[:, :r] * state.sigma[:r]


def transformed_stack(state: SvdState, like: HankelStack) -> HankelStack:
    """``H_bar`` partitioned like ``like`` (same horizons and signal sizes)."""
    return HankelStack(transformed_hankel(state), like.n_init, like.n_pred, like.n_u, like.n_y)


def reduce_stack(stack: HankelStack, rank_tol: float = DEFAULT_RANK_TOL) -> HankelStack:
    """Transformed stack from a fresh thin SVD of ``stack.H``."""
    U1, s, _, _ = svd_thin(stack.H, rank_tol)
    return HankelStack(U1 * s, stack.n_init, stack.n_pred, stack.n_u, stack.n_y)
