import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdeepc.errors import InsufficientData, InvalidInput
from rdeepc.hankel import (HankelStack, SignalLog, append_column, build_hankel, check_persistent_excitation,
                           empty_stack, fundamental_lemma_residual, stack_and_partition, window_vector)
from rdeepc.ltisim import simulate


def naive_hankel(s, L):
    s = np.asarray(s, float).reshape(len(s), -1)
    return np.column_stack([s[j:j + L].reshape(-1) for j in range(len(s) - L + 1)])


def noiseless_log(plant, T, rng):
    u = rng.standard_normal((T, 1))
    y, _ = simulate(plant, u)
    return SignalLog(u, y)


# ---- build_hankel

def test_build_small():
    np.testing.assert_array_equal(build_hankel([1, 2, 3, 4], 2), [[1, 2, 3], [2, 3, 4]])


@pytest.mark.parametrize("L", [1, 3, 6])
def test_build_constant_rank_one(L):
    H = build_hankel(np.full(10, 2.5), L)
    assert np.all(H == 2.5)
    assert np.linalg.matrix_rank(H) == 1


def test_build_matches_window_extraction_on_benchmark(plant, rng):
    u = rng.standard_normal((20, 1))
    y, _ = simulate(plant, u, plant.innovations(20, rng))
    np.testing.assert_array_equal(build_hankel(y, 5), naive_hankel(y, 5))


def test_build_too_short():
    with pytest.raises(InsufficientData):
        build_hankel([1.0, 2.0], 3)


@given(st.integers(1, 3), st.integers(1, 6), st.integers(0, 12), st.integers(0, 2**31))
def test_build_shift_structure(n, L, extra, seed):
    s = np.random.default_rng(seed).standard_normal((L + extra, n))
    H = build_hankel(s, L)
    assert H.shape == (L * n, extra + 1)
    np.testing.assert_array_equal(H, naive_hankel(s, L))
    np.testing.assert_array_equal(H[n:, :-1], H[:-n, 1:])


# ---- stack_and_partition

def test_toy_stack_layout():
    log = SignalLog(u=[10.0, 20, 30, 40], y=[1.0, 2, 3, 4])
    st_ = stack_and_partition(log, 1, 1)
    assert st_.H.shape == (4, 3)
    np.testing.assert_array_equal(st_.H, [[1, 2, 3], [2, 3, 4], [10, 20, 30], [20, 30, 40]])
    np.testing.assert_array_equal(st_.H_y_init, [[1, 2, 3]])
    np.testing.assert_array_equal(st_.H_y_pred, [[2, 3, 4]])
    np.testing.assert_array_equal(st_.H_u, [[10, 20, 30], [20, 30, 40]])


def test_partition_round_trip(rng):
    log = SignalLog(rng.standard_normal((30, 2)), rng.standard_normal((30, 3)))
    s = stack_and_partition(log, 4, 3)
    re = np.vstack([s.block("y_init"), s.block("y_pred"), s.block("u_init"), s.block("u_pred")])
    np.testing.assert_array_equal(re, s.H)
    np.testing.assert_array_equal(s.regressor(), np.vstack([s.H_y_init, s.H_u]))
    assert s.row_H == 7 * 5


def test_benchmark_sized_stack(plant, rng):
    s = stack_and_partition(noiseless_log(plant, 200, rng), 10, 10)
    assert s.col_H == 181
    assert s.row_H == 40


def test_stack_insufficient():
    with pytest.raises(InsufficientData):
        stack_and_partition(SignalLog(np.zeros(5), np.zeros(5)), 3, 3)


def test_signal_log_validation():
    with pytest.raises(InvalidInput):
        SignalLog(np.zeros(4), np.zeros(5))
    with pytest.raises(InvalidInput):
        SignalLog([np.inf], [0.0])


def test_signal_log_csv_round_trip(tmp_path, rng):
    log = SignalLog(rng.standard_normal((7, 2)), rng.standard_normal((7, 1)))
    path = tmp_path / "log.csv"
    log.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,u_0,u_1,y_0"
    back = SignalLog.from_csv(path)
    np.testing.assert_array_equal(back.u, log.u)
    np.testing.assert_array_equal(back.y, log.y)


# ---- append_column

def test_append_duplicate_keeps_rank(rng):
    s = stack_and_partition(SignalLog(rng.standard_normal(12), rng.standard_normal(12)), 2, 2)
    s2 = append_column(s, s.H[:, -1])
    assert s2.col_H == s.col_H + 1
    assert np.linalg.matrix_rank(s2.H) == np.linalg.matrix_rank(s.H)


def test_append_true_next_window_matches_rebuild():
    u, y = np.array([10.0, 20, 30, 40, 50]), np.array([1.0, 2, 3, 4, 5])
    s4 = stack_and_partition(SignalLog(u[:4], y[:4]), 1, 1)
    s5 = stack_and_partition(SignalLog(u, y), 1, 1)
    grown = append_column(s4, (y[3:5], u[3:5]))
    np.testing.assert_array_equal(grown.H, s5.H)


def test_sequential_appends_equal_one_shot(plant, rng):
    log = noiseless_log(plant, 119, rng)
    n_init, n_pred = 10, 10
    L = n_init + n_pred
    s = empty_stack(n_init, n_pred, 1, 1)
    for j in range(log.T - L + 1):
        s = append_column(s, window_vector(log.y[j:j + L], log.u[j:j + L]))
    assert s.col_H == 100
    np.testing.assert_array_equal(s.H, stack_and_partition(log, n_init, n_pred).H)


def test_append_wrong_size(rng):
    s = empty_stack(2, 2, 1, 1)
    with pytest.raises(InvalidInput):
        append_column(s, np.zeros(5))


# ---- persistent excitation

def test_constant_input_not_pe():
    ok, smin = check_persistent_excitation(np.ones(20), 2)
    assert not ok and smin < 1e-12


def test_white_noise_is_pe():
    u = np.random.default_rng(7).standard_normal(300)
    ok, smin = check_persistent_excitation(u, 25)
    assert ok
    # direct SVD of the depth-25 Hankel matrix of this seed
    assert smin == pytest.approx(11.502692577453846, rel=1e-10)


def test_impulse_pe_matches_direct_rank():
    u = np.zeros(10)
    u[0] = 1.0
    ok, _ = check_persistent_excitation(u, 10)
    Hu = build_hankel(u, 10)  # a single column
    assert ok == (np.linalg.matrix_rank(Hu) == 10)
    assert not ok


# ---- fundamental lemma

@pytest.fixture(scope="module")
def noiseless_stack():
    from rdeepc.ltisim import benchmark_system
    plant = benchmark_system()
    return stack_and_partition(noiseless_log(plant, 400, np.random.default_rng(3)), 10, 10), plant


def test_column_of_h_has_zero_residual(noiseless_stack):
    s, _ = noiseless_stack
    assert fundamental_lemma_residual(s, s.H[:, 17]) <= 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_fresh_trajectory_in_span(noiseless_stack, seed):
    s, plant = noiseless_stack
    rng = np.random.default_rng(100 + seed)
    x0 = 5 * rng.standard_normal(plant.n_x)
    u = rng.standard_normal((20, 1))
    y, _ = simulate(plant, u, x0=x0)
    assert fundamental_lemma_residual(s, (y, u)) <= 1e-8


def test_random_vector_not_in_span(noiseless_stack, rng):
    s, _ = noiseless_stack
    assert fundamental_lemma_residual(s, rng.standard_normal(40)) > 1e-3
