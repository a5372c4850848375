"""Stochastic LTI systems in innovation form and their exact multi-step predictors.

    x_{t+1} = A x_t + B u_t + K e_t
    y_t     = C x_t + D u_t + e_t

Stacked vectors are time-ascending (oldest sample first) throughout.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from rdeepc.errors import InvalidInput

log = logging.getLogger(__name__)


def _mat(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True)
class InnovationLti:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        A, B, C, D, K = (_mat(getattr(self, n), n) for n in "ABCDK")
        n_x = A.shape[0]
        if A.shape != (n_x, n_x):
            raise InvalidInput("A must be square")
        n_u, n_y = B.shape[1], C.shape[0]
        for M, shape, name in ((B, (n_x, n_u), "B"), (C, (n_y, n_x), "C"),
                               (D, (n_y, n_u), "D"), (K, (n_x, n_y), "K")):
            if M.shape != shape:
                raise InvalidInput(f"{name} has shape {M.shape}, expected {shape}")
        if self.noise_var < 0:
            raise InvalidInput("noise_var must be nonnegative")
        for n, M in zip("ABCDK", (A, B, C, D, K)):
            object.__setattr__(self, n, M)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def A_tilde(self) -> np.ndarray:
        """Predictor-form state matrix ``A - K C``."""
        return self.A - self.K @ self.C

    @property
    def B_tilde(self) -> np.ndarray:
        return self.B - self.K @ self.D

    def predictor_spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A_tilde))))

    def innovations(self, T: int, rng: np.random.Generator) -> np.ndarray:
        """Zero-mean Gaussian innovations of variance ``noise_var``, shape (T, n_y)."""
        return np.sqrt(self.noise_var) * rng.standard_normal((T, self.n_y))


def benchmark_system() -> InnovationLti:
    """Two circular plates coupled by flexible shafts (fifth order, SISO)."""
    A = np.array([
        [4.4, 1, 0, 0, 0],
        [-8.09, 0, 1, 0, 0],
        [7.83, 0, 0, 1, 0],
        [-4, 0, 0, 0, 1],
        [0.86, 0, 0, 0, 0],
    ])
    B = np.array([[0.00098], [0.01299], [0.01859], [0.0033], [-0.00002]])
    K = np.array([[2.3], [-6.64], [7.515], [-4.0146], [0.86336]])
    C = np.array([[1.0, 0, 0, 0, 0]])
    D = np.zeros((1, 1))
    return InnovationLti(A, B, C, D, K, noise_var=0.1)


def simulate(sys: InnovationLti, u, e=None, x0=None):
    """Run the innovation-form recursion.

    Returns ``(y, x_traj)`` with ``y`` of shape (T, n_y) and ``x_traj`` of
    shape (T + 1, n_x), ``x_traj[t]`` being the state before step ``t``.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    T = u.shape[0]
    if u.shape != (T, sys.n_u):
        raise InvalidInput(f"u must be (T, {sys.n_u})")
    e = np.zeros((T, sys.n_y)) if e is None else np.asarray(e, dtype=float)
    if e.ndim == 1 and sys.n_y == 1:
        e = e[:, None]
    if e.shape != (T, sys.n_y):
        raise InvalidInput(f"e must be ({T}, {sys.n_y})")
    x = np.zeros(sys.n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (sys.n_x,):
        raise InvalidInput(f"x0 must have {sys.n_x} entries")
    y = np.empty((T, sys.n_y))
    xs = np.empty((T + 1, sys.n_x))
    xs[0] = x
    for t in range(T):
        y[t] = sys.C @ x + sys.D @ u[t] + e[t]
        x = sys.A @ x + sys.B @ u[t] + sys.K @ e[t]
        xs[t + 1] = x
    return y, xs


@dataclass(frozen=True)
class PredictorMatrices:
    """Linear predictor ``y_pred = K_y_init y_init + K_u_init u_init + K_u_pred u_pred``."""

    K_y_init: np.ndarray
    K_u_init: np.ndarray
    K_u_pred: np.ndarray

    def predict(self, y_init, u_init, u_pred) -> np.ndarray:
        return (self.K_y_init @ np.ravel(y_init) + self.K_u_init @ np.ravel(u_init)
                + self.K_u_pred @ np.ravel(u_pred))

    @property
    def stacked(self) -> np.ndarray:
        """``[K_y_init, K_u_init, K_u_pred]`` acting on ``[y_init; u_init; u_pred]``."""
        return np.hstack([self.K_y_init, self.K_u_init, self.K_u_pred])

    def blocks(self) -> dict:
        return {"K_y_init": self.K_y_init, "K_u_init": self.K_u_init, "K_u_pred": self.K_u_pred}


def observability_matrix(sys: InnovationLti, n: int) -> np.ndarray:
    """``[C; CA; ...; CA^{n-1}]``."""
    rows, M = [], sys.C
    for _ in range(n):
        rows.append(M)
        M = M @ sys.A
    return np.vstack(rows)


def toeplitz_markov(sys: InnovationLti, n: int) -> np.ndarray:
    """Block lower-triangular Toeplitz matrix of ``D, CB, CAB, ...``."""
    ny, nu = sys.n_y, sys.n_u
    markov = [sys.D]
    M = sys.B
    for _ in range(n - 1):
        markov.append(sys.C @ M)
        M = sys.A @ M
    T = np.zeros((n * ny, n * nu))
    for i in range(n):
        for j in range(i + 1):
            T[i * ny:(i + 1) * ny, j * nu:(j + 1) * nu] = markov[i - j]
    return T


def reversed_reachability(A, B, n: int) -> np.ndarray:
    """``[A^{n-1} B, A^{n-2} B, ..., B]`` (columns act on time-ascending inputs)."""
    blocks, M = [], B
    for _ in range(n):
        blocks.append(M)
        M = A @ M
    return np.hstack(blocks[::-1])


def ground_truth_predictor(sys: InnovationLti, n_init: int, n_pred: int,
                           warn_tol: float = 1e-3) -> PredictorMatrices:
    """Exact predictor up to the transient ``Gamma A_tilde^{n_init} x_{t-n_init}``.

    From the predictor form ``x_{t+1} = A_tilde x_t + B_tilde u_t + K y_t``,
    ``x_t = A_tilde^{n_init} x_{t-n_init} + K3 u_init + K4 y_init``; substituting
    into ``y = Gamma x_t + K1 u_pred + K2 e_pred`` gives ``(Gamma K4, Gamma K3, K1)``.
    """
    At = sys.A_tilde
    leftover = np.linalg.norm(np.linalg.matrix_power(At, n_init), 2)
    if leftover > warn_tol:
        warnings.warn(f"||(A-KC)^{n_init}|| = {leftover:.2e}; predictor is biased by the initial state",
                      stacklevel=2)
    Gamma = observability_matrix(sys, n_pred)
    K1 = toeplitz_markov(sys, n_pred)
    K3 = reversed_reachability(At, sys.B_tilde, n_init)
    K4 = reversed_reachability(At, sys.K, n_init)
    return PredictorMatrices(K_y_init=Gamma @ K4, K_u_init=Gamma @ K3, K_u_pred=K1)
