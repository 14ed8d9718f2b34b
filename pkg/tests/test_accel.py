import math

import numpy as np
import pytest

from cdkit.accel import AccelState, alpha_beta, coefficient_sequence, gamma_next, run_accel_cd
from cdkit.problems import QuadraticProblem, generate_synthetic
from cdkit.reference import reference_optimum
from cdkit.schedules import UniformIID


def oracle_accel(Q, b, x0, idx, sigma, L):
    """Textbook loop with numpy, no incremental products."""
    n = len(b)
    x = x0.astype(float)
    v = x.copy()
    g = 0.0
    for i in idx:
        bq = (sigma * g * g - 1.0) / n
        g = (-bq + math.sqrt(bq * bq + 4 * g * g)) / 2.0
        a = (n - g * sigma) / (g * (n * n - sigma))
        beta = 1.0 - g * sigma / n
        y = a * v + (1 - a) * x
        d = Q[i] @ y - b[i]
        x = y.copy()
        x[i] -= d / L[i]
        v = beta * v + (1 - beta) * y
        v[i] -= g * d / L[i]
    return x, v


def test_gamma_examples():
    assert gamma_next(0.0, 0.0, 4) == 0.25
    assert gamma_next(0.25, 0.0, 4) == pytest.approx((0.25 + math.sqrt(0.3125)) / 2, abs=1e-15)
    assert gamma_next(0.0, 0.37, 9) == pytest.approx(1 / 9, rel=1e-15)


def test_gamma_root_satisfies_recursion_when_b_positive():
    g_prev, sigma, n = 50.0, 0.9, 3
    g = gamma_next(g_prev, sigma, n)
    assert g * g - g / n == pytest.approx((1 - g * sigma / n) * g_prev ** 2, rel=1e-12)
    assert g > 0


def test_alpha_beta_examples():
    c = alpha_beta(1 / 7, 0.0, 7)
    assert (c.alpha, c.beta) == pytest.approx((1.0, 1.0))
    assert alpha_beta(0.9, 0.0, 3).beta == 1.0


def test_alpha_beta_rejects_bad_domain():
    with pytest.raises(ValueError):
        alpha_beta(0.5, 4.0, 2)
    with pytest.raises(ValueError):
        alpha_beta(10.0, 0.5, 5)


def test_coefficient_sanity_sigma_zero():
    seq = coefficient_sequence(500, 0.0, 10)
    gammas = [c.gamma for c in seq]
    assert all(b > a for a, b in zip(gammas, gammas[1:]))
    assert all(0 < c.alpha <= 1 and c.beta == 1.0 for c in seq)


def test_coefficient_sanity_sigma_positive():
    for c in coefficient_sequence(2000, 0.01, 10):
        assert 0 < c.alpha <= 1
        assert 0 <= c.beta <= 1


def test_state_starts_with_v_equal_x():
    s = AccelState.start([1.0, 2.0])
    np.testing.assert_array_equal(s.v, s.x)
    assert s.k == 0


def test_scalar_quadratic_one_step():
    q = QuadraticProblem(np.array([[3.0]]), [6.0], known_xstar=[2.0])
    tr = run_accel_cd(q, np.array([-5.0]), 0.0, 1, 1, seed=0)
    assert tr.gaps[-1] <= 1e-20


@pytest.mark.parametrize("sigma,use_lmax", [(0.0, False), (1e-3, False), (0.0, True)])
def test_matches_textbook_oracle(sigma, use_lmax):
    q0 = generate_synthetic(12, 12, 50.0, 0.7, 0.1, seed=3)
    b = np.random.default_rng(1).standard_normal(12)
    q = QuadraticProblem(q0.Q, b)
    x0 = np.random.default_rng(2).standard_normal(12)
    tr = run_accel_cd(q, x0, sigma, 300, 300, seed=11, use_lmax=use_lmax)
    idx = UniformIID(12, seed=11).take(300)
    L = np.full(12, q.diag.max()) if use_lmax else q.diag
    x, v = oracle_accel(q.to_dense(), b, x0, idx, sigma, L)
    np.testing.assert_allclose(tr.final_x, x, rtol=1e-9, atol=1e-11)
    np.testing.assert_allclose(tr.info["v"], v, rtol=1e-9, atol=1e-11)


def test_sigma_zero_momentum_update():
    q = QuadraticProblem(np.diag([1.0, 2.0, 4.0]), [1.0, 1.0, 1.0])
    x0 = np.array([1.0, -1.0, 2.0])
    tr = run_accel_cd(q, x0, 0.0, 1, 1, seed=0)
    i = UniformIID(3, seed=0).take(1)[0]
    d = q.diag[i] * x0[i] - 1.0
    v_expected = x0.copy()
    v_expected[i] -= (1 / 3) * d / q.diag[i]
    np.testing.assert_allclose(tr.info["v"], v_expected, rtol=0, atol=1e-15)


def test_determinism():
    q = generate_synthetic(20, 20, 100.0, 1.0, 0.0, seed=0)
    a = run_accel_cd(q, np.ones(20), None, 500, 100, seed=4)
    b = run_accel_cd(q, np.ones(20), None, 500, 100, seed=4)
    assert a.same_values(b)


def _iters_to(tr, thresh):
    hit = np.flatnonzero(tr.gaps <= thresh)
    return int(tr.ks[hit[0]]) if hit.size else math.inf


def test_faster_than_plain_on_ill_conditioned_instance():
    from cdkit.schedules import StepRule
    from cdkit.serial import run_cd
    n = 100
    q = generate_synthetic(n, n, 1e4, 1.0, 0.0, seed=0)
    reference_optimum(q)
    acc, plain = [], []
    for s in range(20):
        x0 = np.random.default_rng(1000 + s).standard_normal(n)
        thresh = 1e-4 * (q.value(x0) - q.known_fstar)
        ta = run_accel_cd(q, x0, None, 200_000, 100, seed=s, target_gap=thresh)
        tp = run_cd(q, UniformIID(n, seed=s), StepRule.fixed_lmax(), x0, 2_000_000, 100,
                    target_gap=thresh)
        acc.append(_iters_to(ta, thresh))
        plain.append(_iters_to(tp, thresh))
    assert np.median(acc) < np.median(plain)


def test_rejects_overstated_dimension_condition():
    with pytest.raises(ValueError):
        run_accel_cd(QuadraticProblem(np.eye(1)), np.ones(1), 1.0, 1, 1)
