import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdeepc.errors import InvalidInput
from rdeepc.instances import random_stable_system
from rdeepc.ltisim import (InnovationLti, PredictorMatrices, benchmark_system, ground_truth_predictor,
                           observability_matrix, reversed_reachability, simulate, toeplitz_markov)


def scalar_system(a=0.5, k=0.0):
    return InnovationLti([[a]], [[1.0]], [[1.0]], [[0.0]], [[k]])


def step_by_step(sys, u, e, x0):
    x = np.array(x0, float)
    out = []
    for t in range(len(u)):
        out.append(sys.C @ x + sys.D @ u[t] + e[t])
        x = sys.A @ x + sys.B @ u[t] + sys.K @ e[t]
    return np.array(out)


# ---- simulate

def test_zero_everything_gives_zero(plant):
    y, xs = simulate(plant, np.zeros((30, 1)))
    assert np.all(y == 0) and np.all(xs == 0)


def test_geometric_impulse_response():
    u = np.zeros(6)
    u[0] = 1.0
    y, _ = simulate(scalar_system(), u)
    np.testing.assert_allclose(y.ravel(), [0, 1, 0.5, 0.25, 0.125, 0.0625])


def test_benchmark_matches_duplicate_recursion(plant, rng):
    u = rng.standard_normal((200, 1))
    e = plant.innovations(200, rng)
    x0 = rng.standard_normal(5)
    y, xs = simulate(plant, u, e, x0)
    np.testing.assert_allclose(y, step_by_step(plant, u, e, x0), rtol=0, atol=1e-12)
    np.testing.assert_array_equal(xs[0], x0)


@given(st.integers(0, 2**31))
def test_linearity(seed):
    rng = np.random.default_rng(seed)
    sys = random_stable_system(rng, n_x=3, n_u=2, n_y=2, direct=True)
    u1, u2 = rng.standard_normal((25, 2)), rng.standard_normal((25, 2))
    y12, _ = simulate(sys, u1 + u2)
    y1, _ = simulate(sys, u1)
    y2, _ = simulate(sys, u2)
    np.testing.assert_allclose(y12, y1 + y2, atol=1e-12)


def test_simulate_dimension_checks(plant):
    with pytest.raises(InvalidInput):
        simulate(plant, np.zeros((5, 2)))
    with pytest.raises(InvalidInput):
        simulate(plant, np.zeros(5), e=np.zeros(4))
    with pytest.raises(InvalidInput):
        simulate(plant, np.zeros(5), x0=np.zeros(3))


def test_system_validation():
    with pytest.raises(InvalidInput):
        InnovationLti(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), np.zeros((1, 1)), np.zeros((2, 1)))
    with pytest.raises(InvalidInput):
        InnovationLti([[1.0]], [[1.0]], [[1.0]], [[0.0]], [[0.0]], noise_var=-1)


def test_innovations_variance(plant):
    e = plant.innovations(200_000, np.random.default_rng(0))
    assert e.shape == (200_000, 1)
    assert abs(e.var() - 0.1) < 0.003


# ---- benchmark

def test_benchmark_entries(plant):
    assert plant.A[0, 0] == 4.4
    assert plant.B[4, 0] == -0.00002
    assert plant.K[0, 0] == 2.3
    assert (plant.n_x, plant.n_u, plant.n_y) == (5, 1, 1)
    assert plant.noise_var == 0.1
    np.testing.assert_array_equal(plant.D, [[0.0]])


def test_benchmark_predictor_is_stable(plant):
    # eigenvalues of A - KC from numpy.linalg.eigvals: {0.8, 0.7, 0.6, 0.1, 0.1}
    assert plant.predictor_spectral_radius() == pytest.approx(0.8, abs=1e-9)
    np.testing.assert_allclose(np.sort(np.abs(np.linalg.eigvals(plant.A_tilde))), [0.1, 0.1, 0.6, 0.7, 0.8],
                               atol=1e-6)


# ---- ground truth predictor

def test_structure_helpers(plant):
    G = observability_matrix(plant, 3)
    np.testing.assert_allclose(G[2], (plant.C @ plant.A @ plant.A).ravel())
    T = toeplitz_markov(plant, 3)
    assert T[0, 0] == 0.0 and T[1, 0] == pytest.approx((plant.C @ plant.B).item())
    assert np.all(np.triu(T, 1) == 0)
    R = reversed_reachability(plant.A, plant.B, 2)
    np.testing.assert_allclose(R, np.hstack([plant.A @ plant.B, plant.B]))


def test_one_step_without_feedthrough(plant):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pm = ground_truth_predictor(plant, 3, 1)
    np.testing.assert_array_equal(pm.K_u_pred, [[0.0]])


def test_zero_kalman_gain_degenerates(rng):
    sys = random_stable_system(rng, n_x=3, radius=0.5)
    sys = InnovationLti(sys.A, sys.B, sys.C, sys.D, np.zeros((3, 1)))
    pm = ground_truth_predictor(sys, 40, 4)
    assert np.all(pm.K_y_init == 0)
    np.testing.assert_allclose(pm.K_u_init, observability_matrix(sys, 4) @ reversed_reachability(sys.A, sys.B, 40))


def test_warns_when_init_horizon_too_short(plant):
    with pytest.warns(UserWarning, match="biased"):
        ground_truth_predictor(plant, 5, 5)


def test_exact_with_full_transient_term(plant, rng):
    # y_pred - prediction == Gamma (A-KC)^n_init x_{t-n_init} exactly (noiseless)
    n_init, n_pred = 15, 6
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pm = ground_truth_predictor(plant, n_init, n_pred)
    u = rng.standard_normal((n_init + n_pred, 1))
    x0 = rng.standard_normal(5)
    y, _ = simulate(plant, u, x0=x0)
    pred = pm.predict(y[:n_init], u[:n_init], u[n_init:])
    transient = observability_matrix(plant, n_pred) @ np.linalg.matrix_power(plant.A_tilde, n_init) @ x0
    np.testing.assert_allclose(y[n_init:].ravel() - pred, transient, atol=1e-9 * np.abs(y).max())


def test_ground_truth_noisy_prediction_is_unbiased(plant):
    # Monte Carlo: mean prediction error over N windows shrinks like 1/sqrt(N)
    n_init, n_pred, N = 50, 5, 1000
    pm = ground_truth_predictor(plant, n_init, n_pred, warn_tol=1.0)
    rng = np.random.default_rng(5)
    T = N * 10 + n_init + n_pred
    u = rng.standard_normal((T, 1))
    y, _ = simulate(plant, u, plant.innovations(T, rng))
    errs = []
    for j in range(N):
        t = 10 * j + n_init
        errs.append(y[t:t + n_pred].ravel() - pm.predict(y[t - n_init:t], u[t - n_init:t], u[t:t + n_pred]))
    errs = np.array(errs)
    # future innovation part: K2 e_pred with K2 = lower Toeplitz of (I, CK, CAK, ...)
    K2 = toeplitz_markov(InnovationLti(plant.A, plant.K, plant.C, np.eye(1), plant.K), n_pred)
    se = np.sqrt(plant.noise_var * np.sum(K2**2, axis=1) / N)
    assert np.linalg.norm(errs.mean(axis=0)) < 5 * np.linalg.norm(se)


def test_predictor_matrices_container():
    pm = PredictorMatrices(np.ones((2, 3)), 2 * np.ones((2, 3)), 3 * np.ones((2, 2)))
    assert pm.stacked.shape == (2, 8)
    np.testing.assert_allclose(pm.predict(np.ones(3), np.ones(3), np.ones(2)), [15, 15])
    assert set(pm.blocks()) == {"K_y_init", "K_u_init", "K_u_pred"}
