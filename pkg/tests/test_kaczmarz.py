import math

import numpy as np
import pytest
import scipy.sparse as sp

from cdkit.kaczmarz import (default_sigma, distance_sq, kaczmarz_step, lambda_min_nz,
                            projection_to_solution_set, reconstruct, run_accel_kaczmarz_dense,
                            run_accel_kaczmarz_sparse, run_randomized_kaczmarz)
from cdkit.problems import LinearSystemProblem, generate_linear_system
from cdkit.schedules import UniformIID

S2 = 1 / math.sqrt(2)


def oracle_ark(A, b, w0, idx, sigma):
    """Accelerated Kaczmarz written out with dense numpy rows."""
    m = A.shape[0]
    w = w0.astype(float)
    v = w.copy()
    g = 0.0
    for i in idx:
        bq = (sigma * g * g - 1.0) / m
        g = (-bq + math.sqrt(bq * bq + 4 * g * g)) / 2.0
        a = (m - g * sigma) / (g * (m * m - sigma))
        beta = 1.0 - g * sigma / m
        y = a * v + (1 - a) * w
        d = (A[i] @ y - b[i]) * A[i]
        w = y - d
        v = beta * v + (1 - beta) * y - g * d
    return w, v


def test_step_examples():
    s = LinearSystemProblem(np.eye(2), [3.0, 4.0])
    assert kaczmarz_step(s, np.zeros(2), 0).tolist() == [3.0, 0.0]
    w = np.array([3.0, 9.0])
    np.testing.assert_array_equal(kaczmarz_step(s, w, 0), w)
    h = LinearSystemProblem(np.array([[S2, S2]]), [math.sqrt(2)])
    np.testing.assert_allclose(kaczmarz_step(h, np.zeros(2), 0), [1.0, 1.0], atol=1e-15)


def test_step_satisfies_row():
    s = generate_linear_system(15, 10, 0.4, seed=0)
    w = np.random.default_rng(0).standard_normal(10)
    for i in range(15):
        w = kaczmarz_step(s, w, i)
        assert abs(s.A[i] @ w - s.b[i]) <= 1e-10


def test_step_rejects_loose_row_norm():
    s = LinearSystemProblem(np.array([[1.0 + 1e-7, 0.0]]), [1.0], row_tol=1e-6)
    with pytest.raises(ValueError):
        kaczmarz_step(s, np.zeros(2), 0)


def test_projection_examples():
    s = LinearSystemProblem(np.eye(3), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(projection_to_solution_set(s, np.full(3, 7.0)), [1, 2, 3])
    r = LinearSystemProblem(np.array([[1.0, 0.0]]), [1.0])
    np.testing.assert_allclose(projection_to_solution_set(r, np.array([0.0, 5.0])), [1.0, 5.0])
    g = generate_linear_system(20, 30, 0.3, seed=3)
    np.testing.assert_allclose(projection_to_solution_set(g, g.w_true), g.w_true, atol=1e-12)


def test_projection_large_m_lsqr_matches_pinv():
    s = generate_linear_system(300, 200, 0.05, seed=1)
    w = np.random.default_rng(1).standard_normal(200)
    p = projection_to_solution_set(s, w)
    ref = w - np.linalg.pinv(s.A.toarray()) @ (s.A @ w - s.b)
    np.testing.assert_allclose(p, ref, atol=1e-8)


def test_scalar_system_plain():
    s = LinearSystemProblem(np.ones((1, 1)), [2.5])
    tr = run_randomized_kaczmarz(s, np.zeros(1), 1, 1, seed=0)
    assert tr.final_x[0] == 2.5


def test_scalar_system_accelerated():
    s = LinearSystemProblem(np.ones((1, 1)), [2.5])
    tr = run_accel_kaczmarz_dense(s, np.zeros(1), None, 3, 1, seed=0)
    assert tr.gaps[-1] <= 1e-20
    assert tr.final_x[0] == pytest.approx(2.5)


def test_distance_is_monotone_for_plain():
    s = generate_linear_system(40, 30, 0.2, seed=5)
    tr = run_randomized_kaczmarz(s, np.random.default_rng(0).standard_normal(30), 500, 1, seed=2)
    d = np.sqrt(tr.gaps)
    assert np.all(np.diff(d) <= 1e-12)


def test_rank_deficient_lambda_floor():
    base = generate_linear_system(10, 20, 0.5, seed=2)
    A = sp.vstack([base.A, base.A[:3]]).tocsr()
    s = LinearSystemProblem(A, np.concatenate([base.b, base.b[:3]]))
    G = (A @ A.T).toarray()
    ev = np.linalg.eigvalsh(G)
    assert ev[0] < 1e-12
    assert lambda_min_nz(s) == pytest.approx(ev[ev > 1e-9][0], rel=1e-10)


def test_default_sigma_rules():
    assert default_sigma(LinearSystemProblem(np.ones((1, 1)), [1.0])) == 0.0
    s = generate_linear_system(30, 40, 0.3, seed=0)
    assert default_sigma(s) == pytest.approx(lambda_min_nz(s))
    assert default_sigma(generate_linear_system(300, 100, 0.05, seed=0)) == 0.0


@pytest.mark.parametrize("sigma", [0.0, None])
def test_dense_matches_numpy_oracle(sigma):
    s = generate_linear_system(30, 20, 0.3, seed=4)
    w0 = np.random.default_rng(0).standard_normal(20)
    tr = run_accel_kaczmarz_dense(s, w0, sigma, 400, 400, seed=9)
    idx = UniformIID(30, seed=9).take(400)
    w, v = oracle_ark(s.A.toarray(), s.b, w0, idx, tr.info["sigma"])
    np.testing.assert_allclose(tr.final_x, w, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(tr.info["v"], v, rtol=1e-10, atol=1e-12)


def test_sparse_starts_at_identity():
    s = generate_linear_system(10, 8, 0.5, seed=0)
    w0 = np.arange(8.0)
    tr = run_accel_kaczmarz_sparse(s, w0, None, 0, 1, seed=0)
    np.testing.assert_array_equal(tr.info["B"], np.eye(2))
    np.testing.assert_array_equal(tr.info["vh"], w0)
    np.testing.assert_array_equal(tr.info["yh"], w0)


@pytest.mark.parametrize("sigma", [0.0, None])
def test_sparse_matches_dense_at_checkpoints(sigma):
    s = generate_linear_system(60, 50, 0.1, seed=6)
    w0 = np.random.default_rng(3).standard_normal(50)
    d = run_accel_kaczmarz_dense(s, w0, sigma, 3000, 300, seed=1, keep_iterates=True)
    sp_ = run_accel_kaczmarz_sparse(s, w0, sigma, 3000, 300, seed=1, keep_iterates=True)
    for a, b in zip(d.snapshots, sp_.snapshots):
        assert np.linalg.norm(a - b) <= 1e-8 * max(np.linalg.norm(a), 1e-300)
    v, _ = reconstruct(sp_.info["vh"], sp_.info["yh"], sp_.info["B"])
    assert np.linalg.norm(v - d.info["v"]) <= 1e-8 * np.linalg.norm(d.info["v"])


def test_renormalization_is_transparent():
    s = generate_linear_system(40, 30, 0.2, seed=8)
    w0 = np.ones(30)
    never = run_accel_kaczmarz_sparse(s, w0, None, 2000, 200, seed=2, renormalize="never",
                                      keep_iterates=True)
    always = run_accel_kaczmarz_sparse(s, w0, None, 2000, 200, seed=2, renormalize="always",
                                       keep_iterates=True)
    assert always.info["folds"] == 2000
    for a, b in zip(never.snapshots, always.snapshots):
        assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(a)


def test_sparse_flops_scale_with_row_nnz():
    s = generate_linear_system(1000, 1000, 0.01, seed=0)
    w0 = np.zeros(1000)
    k = 2000
    sp_ = run_accel_kaczmarz_sparse(s, w0, 0.0, k, k, seed=0)
    de = run_accel_kaczmarz_dense(s, w0, 0.0, k, k, seed=0)
    idx = UniformIID(1000, seed=0).take(k)
    row_nnz = np.diff(s.A.indptr)
    assert sp_.flops[-1] == int(np.sum(8 * row_nnz[idx] + 48))
    assert de.flops[-1] >= k * 1000
    ratio = sp_.flops[-1] / de.flops[-1]
    assert ratio < 20 * row_nnz.mean() / 1000


def test_bad_renormalize_option():
    s = LinearSystemProblem(np.eye(2), [1.0, 1.0])
    with pytest.raises(ValueError):
        run_accel_kaczmarz_sparse(s, np.zeros(2), renormalize="sometimes")


def test_sigma_too_large_rejected():
    s = LinearSystemProblem(np.eye(2), [1.0, 1.0])
    with pytest.raises(ValueError):
        run_accel_kaczmarz_dense(s, np.zeros(2), 4.0)


def test_distance_sq_zero_on_solution():
    s = generate_linear_system(20, 25, 0.3, seed=4)
    assert distance_sq(s, projection_to_solution_set(s, np.ones(25))) <= 1e-20
