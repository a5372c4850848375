"""Random problem instances for equivalence checks and tests."""

from __future__ import annotations

import numpy as np

from rdeepc.hankel import HankelStack, SignalLog, stack_and_partition
from rdeepc.ltisim import InnovationLti, simulate
from rdeepc.predictors import PredictionRequest


def random_stable_system(rng: np.random.Generator, n_x: int = 4, n_u: int = 1, n_y: int = 1,
                         radius: float = 0.9, noise_var: float = 0.01, direct: bool = False) -> InnovationLti:
    """Random system with ``A`` and ``A - KC`` both of spectral radius at most ``radius``."""
    def scaled(M):
        rho = np.max(np.abs(np.linalg.eigvals(M)))
        return M * (radius / rho) if rho > radius else M

    A = scaled(rng.standard_normal((n_x, n_x)))
    B = rng.standard_normal((n_x, n_u))
    C = rng.standard_normal((n_y, n_x))
    D = rng.standard_normal((n_y, n_u)) if direct else np.zeros((n_y, n_u))
    K = 0.3 * rng.standard_normal((n_x, n_y))
    for _ in range(50):
        if np.max(np.abs(np.linalg.eigvals(A - K @ C))) < radius:
            break
        K *= 0.5
    return InnovationLti(A, B, C, D, K, noise_var=noise_var)


def random_stack(rng: np.random.Generator, n_init: int = 4, n_pred: int = 3, T: int | None = None,
                 n_u: int = 1, n_y: int = 1, noise_var: float = 0.01, sys: InnovationLti | None = None):
    """Stack from a white-noise experiment on a random (or given) system; returns ``(stack, sys, log)``."""
    sys = sys or random_stable_system(rng, n_x=int(rng.integers(2, 6)), n_u=n_u, n_y=n_y, noise_var=noise_var)
    L = n_init + n_pred
    T = T or int(rng.integers(3 * L * (n_u + n_y), 6 * L * (n_u + n_y)))
    u = rng.standard_normal((T, sys.n_u))
    y, _ = simulate(sys, u, sys.innovations(T, rng))
    log = SignalLog(u, y)
    return stack_and_partition(log, n_init, n_pred), sys, log


def random_request(rng: np.random.Generator, stack: HankelStack) -> PredictionRequest:
    return PredictionRequest(rng.standard_normal(stack.n_y * stack.n_init),
                             rng.standard_normal(stack.n_u * stack.n_init),
                             rng.standard_normal(stack.n_u * stack.n_pred))
