"""Dense real linear algebra: thin SVD, symmetric eigensolver, pseudoinverse, convex QP.

The factorizations delegate to LAPACK through numpy; the QP solver is a dense
dual active-set method (Goldfarb-Idnani) for

    minimize    0.5 x'Px + q'x
    subject to  Aeq x = beq,  lb <= x <= ub

with P positive definite on the nullspace of Aeq.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from rdeepc.errors import Infeasible, InvalidInput, MaxIterations

DEFAULT_RANK_TOL = 1e-10
DEFAULT_QP_TOL = 1e-9


def _as_finite_matrix(M, name="M") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidInput(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return M


def numerical_rank(sigma: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Count singular values strictly above ``rank_tol * sigma_max``."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0 or sigma[0] <= 0.0:
        return 0
    return int(np.count_nonzero(sigma > rank_tol * np.max(sigma)))


def svd_thin(M, rank_tol: float = DEFAULT_RANK_TOL):
    """Rank-truncated SVD ``M ~= U1 @ diag(sigma) @ V1.T``.

    Returns
    -------
    U1 : (m, r) array with orthonormal columns
    sigma : (r,) descending singular values above the cutoff
    V1 : (n, r) array with orthonormal columns
    r : numerical rank
    """
    M = _as_finite_matrix(M)
    if rank_tol <= 0:
        raise InvalidInput("rank_tol must be positive")
    m, n = M.shape
    if m == 0 or n == 0:
        return np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)), 0
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = numerical_rank(s, rank_tol)
    return U[:, :r], s[:r], Vt[:r].T, r


def eig_sym(S, sym_tol: float = 1e-12):
    """Eigendecomposition of a symmetric matrix with eigenvalues in descending order."""
    S = _as_finite_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise InvalidInput(f"S must be square, got {S.shape}")
    scale = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > sym_tol * max(scale, np.finfo(float).tiny):
        raise InvalidInput("S is not symmetric")
    lam, Q = np.linalg.eigh(0.5 * (S + S.T))
    return Q[:, ::-1], lam[::-1]


def pinv(M, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse via the truncated SVD."""
    U1, s, V1, _ = svd_thin(M, rank_tol)
    return (V1 / s) @ U1.T


@dataclass
class QpProblem:
    """Strictly convex QP ``min 0.5 x'Px + q'x  s.t. Aeq x = beq, lb <= x <= ub``."""

    P: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    tol: float = DEFAULT_QP_TOL

    def __post_init__(self):
        self.P = _as_finite_matrix(self.P, "P")
        n = self.P.shape[0]
        if self.P.shape != (n, n):
            raise InvalidInput(f"P must be square, got {self.P.shape}")
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        if self.q.shape != (n,) or not np.all(np.isfinite(self.q)):
            raise InvalidInput("q must be a finite vector matching P")
        if self.Aeq is None:
            self.Aeq = np.zeros((0, n))
            self.beq = np.zeros(0)
        self.Aeq = _as_finite_matrix(self.Aeq, "Aeq").reshape(-1, n)
        self.beq = np.asarray(self.beq, dtype=float).reshape(-1)
        if self.beq.shape != (self.Aeq.shape[0],):
            raise InvalidInput("beq length must match Aeq rows")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.broadcast_to(np.asarray(self.lb, float), (n,)).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, float), (n,)).copy()
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise InvalidInput("bounds must not be NaN")
        scale = np.linalg.norm(self.P)
        if np.linalg.norm(self.P - self.P.T) > 1e-12 * max(scale, np.finfo(float).tiny):
            raise InvalidInput("P is not symmetric")

    @property
    def n(self) -> int:
        return self.P.shape[0]


@dataclass
class QpResult:
    x: np.ndarray
    kkt_residual: float
    eq_multipliers: np.ndarray
    bound_multipliers: np.ndarray  # positive: lower bound active, negative: upper
    active: list = field(default_factory=list)  # [(index, +1 lower / -1 upper)]
    iterations: int = 0
    converged: bool = True

    def __iter__(self):
        # allows ``x, res = solve_qp(p)``
        return iter((self.x, self.kkt_residual))


def kkt_residual(p: QpProblem, x, nu, mu) -> float:
    """Scaled KKT residual: max of stationarity, equality, bound and dual-sign violations."""
    grad = p.P @ x + p.q
    stat = grad - p.Aeq.T @ nu - mu
    s_scale = 1.0 + np.max(np.abs(p.q), initial=0.0) + np.max(np.abs(p.P @ x), initial=0.0)
    r_stat = np.max(np.abs(stat), initial=0.0) / s_scale
    r_eq = np.max(np.abs(p.Aeq @ x - p.beq), initial=0.0) / (1.0 + np.max(np.abs(p.beq), initial=0.0))
    lo = np.where(np.isfinite(p.lb), p.lb - x, 0.0)
    hi = np.where(np.isfinite(p.ub), x - p.ub, 0.0)
    b_scale = 1.0 + np.max(np.abs(np.concatenate([p.lb[np.isfinite(p.lb)], p.ub[np.isfinite(p.ub)]])), initial=0.0)
    r_box = max(np.max(lo, initial=0.0), np.max(hi, initial=0.0), 0.0) / b_scale
    # multiplier sign and complementarity
    at_lo = np.isfinite(p.lb) & (x <= p.lb)
    at_hi = np.isfinite(p.ub) & (x >= p.ub)
    wrong = np.where(mu > 0, ~at_lo, False) | np.where(mu < 0, ~at_hi, False)
    r_dual = np.max(np.abs(mu[wrong]), initial=0.0) / s_scale
    return float(max(r_stat, r_eq, r_box, r_dual))


class _ActiveSet:
    """Bookkeeping for the dual active-set iteration.

    Constraints are stored as columns ``n_j`` of ``N`` (so that ``n_j'x >= b_j``
    for inequalities, ``= b_j`` for equalities) together with ``W = G^{-1} N``.
    """

    def __init__(self, chol, Aeq, beq):
        self.chol = chol
        self.Aeq = Aeq
        self.me = Aeq.shape[0]
        self.W_eq = sla.cho_solve(chol, Aeq.T) if self.me else np.zeros((Aeq.shape[1], 0))
        self.S_eq = Aeq @ self.W_eq
        self.bounds: list[tuple[int, int]] = []
        self.W_b = np.zeros((Aeq.shape[1], 0))
        self._ginv_cols: dict[int, np.ndarray] = {}

    def ginv_col(self, i: int) -> np.ndarray:
        col = self._ginv_cols.get(i)
        if col is None:
            e = np.zeros(self.Aeq.shape[1])
            e[i] = 1.0
            col = sla.cho_solve(self.chol, e)
            self._ginv_cols[i] = col
        return col

    def add(self, i: int, s: int, w: np.ndarray):
        self.bounds.append((i, s))
        self.W_b = np.column_stack([self.W_b, w])

    def drop(self, k: int):
        del self.bounds[k]
        self.W_b = np.delete(self.W_b, k, axis=1)

    @property
    def W(self) -> np.ndarray:
        return np.hstack([self.W_eq, self.W_b])

    def Nt(self, v: np.ndarray) -> np.ndarray:
        """``N_A' v`` for a vector or matrix ``v``."""
        top = self.Aeq @ v
        if self.bounds:
            idx = np.array([i for i, _ in self.bounds])
            sgn = np.array([s for _, s in self.bounds], dtype=float)
            bot = sgn[:, None] * v[idx] if v.ndim == 2 else sgn * v[idx]
            return np.concatenate([top, bot], axis=0)
        return top

    def S(self) -> np.ndarray:
        return self.Nt(self.W)


def _factor(p: QpProblem):
    """Cholesky of P, augmented by rho*Aeq'Aeq if P is only positive definite on null(Aeq)."""
    try:
        return sla.cho_factor(p.P), p.q, 0.0
    except np.linalg.LinAlgError:
        pass
    if p.Aeq.shape[0] == 0:
        raise InvalidInput("P is not positive definite")
    rho = max(1.0, np.max(np.abs(p.P))) / max(np.max(np.abs(p.Aeq)) ** 2, np.finfo(float).tiny)
    G = p.P + rho * p.Aeq.T @ p.Aeq
    try:
        chol = sla.cho_factor(G)
    except np.linalg.LinAlgError as exc:
        raise InvalidInput("P is not positive definite on the nullspace of Aeq") from exc
    return chol, p.q - rho * p.Aeq.T @ p.beq, rho


def _eqp(act: _ActiveSet, Ginv_q, rhs):
    """Solve the equality-constrained subproblem for the current active set."""
    W = act.W
    if W.shape[1] == 0:
        return -Ginv_q, np.zeros(0)
    S = act.Nt(W)
    u = np.linalg.solve(S, rhs + act.Nt(Ginv_q))
    return -Ginv_q + W @ u, u


def solve_qp(p: QpProblem, max_iter: int | None = None, warm_active=None, strict: bool = False) -> QpResult:
    """Solve a strictly convex QP with equality and box constraints.

    Parameters
    ----------
    p : QpProblem
    max_iter : active-set change budget, default ``10 * (n + 10)``
    warm_active : optional guess of active bounds ``[(index, +1|-1), ...]``; used
        only if it yields a dual-feasible starting point
    strict : raise :class:`MaxIterations` instead of returning an unconverged result

    Returns
    -------
    QpResult, which also unpacks as ``(x, kkt_residual)``.
    """
    n = p.n
    if np.any(p.lb > p.ub):
        raise Infeasible("empty box: lb > ub")
    chol, q, _ = _factor(p)
    Ginv_q = sla.cho_solve(chol, q)
    act = _ActiveSet(chol, p.Aeq, p.beq)
    if act.me:
        if np.linalg.matrix_rank(p.Aeq) < act.me:
            # consistent redundant rows would still break the dual iteration
            raise InvalidInput("Aeq must have full row rank")

    lb_fin = np.isfinite(p.lb)
    ub_fin = np.isfinite(p.ub)
    bscale = np.maximum(1.0, np.maximum(np.where(lb_fin, np.abs(p.lb), 0), np.where(ub_fin, np.abs(p.ub), 0)))

    def rhs_of(a: _ActiveSet):
        b = [p.lb[i] if s > 0 else -p.ub[i] for i, s in a.bounds]
        return np.concatenate([p.beq, np.array(b, dtype=float)])

    x, u = _eqp(act, Ginv_q, rhs_of(act))
    if warm_active:
        trial = _ActiveSet(chol, p.Aeq, p.beq)
        trial._ginv_cols = act._ginv_cols
        for i, s in warm_active:
            if (s > 0 and lb_fin[i]) or (s < 0 and ub_fin[i]):
                trial.add(i, s, s * trial.ginv_col(i))
        try:
            xt, ut = _eqp(trial, Ginv_q, rhs_of(trial))
            if np.all(ut[act.me:] >= 0):
                act, x, u = trial, xt, ut
        except np.linalg.LinAlgError:
            pass

    max_iter = max_iter or 10 * (n + 10)
    it = 0
    converged = True
    while True:
        viol_lo = np.where(lb_fin, (p.lb - x) / bscale, -np.inf)
        viol_hi = np.where(ub_fin, (x - p.ub) / bscale, -np.inf)
        for i, s in act.bounds:
            (viol_lo if s > 0 else viol_hi)[i] = -np.inf
        j_lo, j_hi = int(np.argmax(viol_lo)), int(np.argmax(viol_hi))
        if max(viol_lo[j_lo], viol_hi[j_hi]) <= p.tol:
            break
        ip, sp = (j_lo, 1) if viol_lo[j_lo] >= viol_hi[j_hi] else (j_hi, -1)
        bp = p.lb[ip] if sp > 0 else -p.ub[ip]
        wp = sp * act.ginv_col(ip)
        npw = sp * wp[ip]  # n_p' G^{-1} n_p
        u_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                converged = False
                break
            if act.W.shape[1]:
                r = np.linalg.solve(act.S(), act.Nt(wp))
                z = wp - act.W @ r
            else:
                r = np.zeros(0)
                z = wp
            # dual step limit from inequality multipliers that would turn negative
            t1, k = np.inf, None
            for jj in range(act.me, len(u)):
                if r[jj] > 0:
                    tj = u[jj] / r[jj]
                    if tj < t1:
                        t1, k = tj, jj
            zn = sp * z[ip]
            slack = sp * x[ip] - bp
            if zn <= 1e-13 * npw:
                if k is None:
                    raise Infeasible("constraints are inconsistent (no feasible point)")
                u = u - t1 * r
                u_p += t1
                act.drop(k - act.me)
                u = np.delete(u, k)
                continue
            t2 = -slack / zn
            t = min(t1, t2)
            x = x + t * z
            u = u - t * r
            u_p += t
            if t2 <= t1:
                act.add(ip, sp, wp)
                u = np.append(u, u_p)
                break
            act.drop(k - act.me)
            u = np.delete(u, k)
        if not converged:
            break

    # polish: exact solve on the final active set
    try:
        xs, us = _eqp(act, Ginv_q, rhs_of(act))
        if np.all(us[act.me:] >= -1e-12 * (1.0 + np.max(np.abs(us), initial=0.0))):
            x, u = xs, us
    except np.linalg.LinAlgError:
        pass
    x, nu, mu, res = _finish(p, act, x, u)
    if res > p.tol:
        # range-space steps lose accuracy when P is badly scaled; retry on the full KKT system
        direct = _kkt_polish(p, act)
        if direct is not None:
            cand = _finish(p, act, *direct)
            if cand[3] < res:
                x, nu, mu, res = cand
    result = QpResult(x=x, kkt_residual=res, eq_multipliers=nu, bound_multipliers=mu,
                      active=list(act.bounds), iterations=it, converged=converged)
    if not converged and strict:
        raise MaxIterations(f"QP did not converge in {max_iter} iterations", result)
    return result


def _finish(p: QpProblem, act: _ActiveSet, x, u):
    """Snap active bounds, build bound multipliers, score the point."""
    x = x.copy()
    mu = np.zeros(p.n)
    for (i, s), ui in zip(act.bounds, u[act.me:]):
        x[i] = p.lb[i] if s > 0 else p.ub[i]
        mu[i] += s * max(ui, 0.0)
    x = np.clip(x, p.lb, p.ub)
    nu = u[: act.me]
    # multipliers were computed for the (possibly augmented) G; recover those of P
    return x, nu, mu, kkt_residual(p, x, _eq_multipliers(p, x, mu, nu), mu)


def _kkt_polish(p: QpProblem, act: _ActiveSet):
    """``(x, u)`` from a direct solve of ``[[P, N], [N', 0]] [x; -u] = [-q; b]`` on the active set."""
    n = p.n
    N = np.zeros((n, act.me + len(act.bounds)))
    N[:, : act.me] = p.Aeq.T
    b = list(p.beq)
    for k, (i, s) in enumerate(act.bounds):
        N[i, act.me + k] = s
        b.append(p.lb[i] if s > 0 else -p.ub[i])
    m = N.shape[1]
    K = np.block([[p.P, N], [N.T, np.zeros((m, m))]])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            sol = sla.solve(K, np.concatenate([-p.q, b]), assume_a="sym")
    except np.linalg.LinAlgError:
        return None
    u = -sol[n:]
    if np.any(u[act.me:] < -1e-9 * (1.0 + np.max(np.abs(u), initial=0.0))):
        return None
    return sol[:n], u


def _eq_multipliers(p: QpProblem, x, mu, nu_guess):
    if p.Aeq.shape[0] == 0:
        return nu_guess
    g = p.P @ x + p.q - mu
    nu, *_ = np.linalg.lstsq(p.Aeq.T, g, rcond=None)
    return nu
