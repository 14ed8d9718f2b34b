import numpy as np
import pytest
import scipy.sparse as sp

from cdkit.problems import (CompositeProblem, PowellProblem, QuadraticProblem, SeparableRegularizer,
                            generate_linear_system, generate_sparse_quadratic, generate_synthetic)
from cdkit.reference import reference_optimum
from cdkit.schedules import Cyclic, EpochShuffle, StepRule, UniformIID
from cdkit.serial import gauss_seidel_normal_equations, normal_equations_problem, run_cd, run_prox_cd
from cdkit.trace import ConvergenceTrace, DivergenceError

POWELL_START = np.array([-1 - 0.01, 1 + 0.01 / 2, -1 - 0.01 / 4])


def test_identity_fixed_lmax_zeroes_chosen_coordinate():
    x0 = np.array([3.0, -2.0, 5.0])
    sched = UniformIID(3, seed=4)
    i0 = UniformIID(3, seed=4).take(1)[0]
    tr = run_cd(QuadraticProblem(np.eye(3)), sched, StepRule.fixed_lmax(), x0, 1, 1)
    assert tr.final_x[i0] == 0.0
    assert np.count_nonzero(tr.final_x != x0) == 1


def test_powell_cyclic_stays_away_from_reference_points():
    tr = run_cd(PowellProblem(), Cyclic(3), StepRule.exact(), POWELL_START, 300, 1, keep_iterates=True)
    dist = [PowellProblem().distance_to_reference(x) for x in tr.snapshots]
    assert len(dist) == 301
    assert min(dist) >= 0.5


def test_powell_rejects_non_exact_steps():
    with pytest.raises(ValueError):
        run_cd(PowellProblem(), Cyclic(3), StepRule.fixed_lmax(), POWELL_START, 3, 1)


@pytest.mark.parametrize("rule", [StepRule.fixed_lmax(), StepRule.per_coordinate(), StepRule.exact()])
def test_monotone_descent(rule):
    q = generate_synthetic(30, 20, 100.0, 0.8, 0.5, seed=2)
    x0 = np.random.default_rng(0).standard_normal(30)
    tr = run_cd(q, UniformIID(30, seed=1), rule, x0, 2000, 1)
    f = tr.objectives
    assert np.all(np.diff(f) <= 1e-12 * np.abs(f[:-1]).max())


def test_seed_determinism():
    q = generate_synthetic(20, 20, 10.0, 1.0, 0.0, seed=0)
    x0 = np.ones(20)
    a = run_cd(q, UniformIID(20, seed=5), StepRule.fixed_lmax(), x0, 500, 50)
    b = run_cd(q, UniformIID(20, seed=5), StepRule.fixed_lmax(), x0, 500, 50)
    assert a.same_values(b)
    np.testing.assert_array_equal(a.final_x, b.final_x)


def test_target_gap_stops_early():
    q = generate_synthetic(10, 10, 2.0, 1.0, 0.0, seed=0)
    tr = run_cd(q, Cyclic(10), StepRule.exact(), np.ones(10), 100_000, 1000, target_gap=1e-8)
    assert tr.stopped == "target"
    assert tr.gaps[-1] <= 1e-8
    assert tr.iterations < 100_000


def test_divergence_guard():
    # positive diagonal but indefinite, so exact steps run off to -inf
    q = QuadraticProblem(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(DivergenceError) as err:
        run_cd(q, Cyclic(2), StepRule.exact(), np.array([1.0, 0.5]), 10_000, 10)
    assert err.value.trace is not None


def test_sparse_flop_accounting():
    q = generate_sparse_quadratic(500, 6, seed=0)
    row_nnz = np.diff(q.csr.indptr)
    sched = UniformIID(500, seed=3)
    idx = UniformIID(500, seed=3).take(1000)
    tr = run_cd(q, sched, StepRule.exact(), np.ones(500), 1000, 1000)
    assert tr.flops[-1] == int(np.sum(2 * row_nnz[idx] + 8))
    assert tr.flops[-1] <= 1000 * (2 * row_nnz.max() + 8)


def test_linear_system_runs_on_dual():
    s = generate_linear_system(30, 20, 0.3, seed=1)
    tr = run_cd(s, UniformIID(30, seed=0), StepRule.fixed_lmax(), np.zeros(30), 20000, 20000)
    np.testing.assert_allclose(s.A @ tr.info["primal"], s.b, atol=1e-6)


def test_trace_csv_roundtrip(tmp_path):
    q = generate_synthetic(10, 10, 10.0, 1.0, 0.0, seed=0)
    tr = run_cd(q, EpochShuffle(10, seed=0), StepRule.fixed_lmax(), np.ones(10), 100, 10)
    path = tr.to_csv(tmp_path / "t.csv")
    assert path.read_text().splitlines()[0] == "k,objective,gap,wall_ns,flops"
    back = ConvergenceTrace.from_csv(path)
    back.final_x = tr.final_x  # the CSV holds checkpoints only
    assert back.same_values(tr)


# proximal

def _lasso(n=12, lam=0.1, seed=0):
    q = generate_synthetic(n, n, 10.0, 1.0, 0.0, seed=seed)
    b = np.random.default_rng(seed).standard_normal(n)
    return CompositeProblem(QuadraticProblem(q.Q, b), SeparableRegularizer.l1(), lam)


@pytest.mark.parametrize("reg,lam", [(SeparableRegularizer.none(), 1.0), (SeparableRegularizer.l1(), 0.0)])
def test_prox_reduces_to_plain(reg, lam):
    q = QuadraticProblem(generate_synthetic(15, 15, 10.0, 1.0, 0.0, seed=1).Q, np.arange(15.0))
    reference_optimum(q)
    x0 = np.ones(15)
    a = run_cd(q, UniformIID(15, seed=2), StepRule.fixed_lmax(), x0, 600, 30)
    b = run_prox_cd(CompositeProblem(q, reg, lam), UniformIID(15, seed=2), StepRule.fixed_lmax(),
                    x0, 600, 30)
    assert a.same_values(b)
    np.testing.assert_array_equal(a.final_x, b.final_x)


def test_prox_single_soft_threshold_step():
    comp = CompositeProblem(QuadraticProblem(np.eye(2), [2.0, 0.0]), SeparableRegularizer.l1(), 1.0)
    tr = run_prox_cd(comp, Cyclic(2), StepRule.fixed_lmax(), np.zeros(2), 1, 1)
    assert tr.final_x.tolist() == [1.0, 0.0]


@pytest.mark.parametrize("make", [lambda: Cyclic(1), lambda: UniformIID(1, seed=0),
                                  lambda: EpochShuffle(1, seed=0)])
def test_scalar_lasso_converges(make):
    comp = CompositeProblem(QuadraticProblem(np.ones((1, 1)), [2.0]), SeparableRegularizer.l1(), 1.0,
                            known_hstar=-0.5)
    tr = run_prox_cd(comp, make(), StepRule.fixed_lmax(), np.array([-7.0]), 200, 1)
    assert tr.final_x[0] == pytest.approx(1.0, abs=1e-12)
    assert tr.gaps[-1] <= 1e-10


def test_prox_fixed_point_epoch():
    comp = _lasso()
    _, xs = reference_optimum(comp)
    tr = run_prox_cd(comp, EpochShuffle(comp.n, seed=0), StepRule.fixed_lmax(), xs, comp.n, comp.n)
    assert np.abs(tr.final_x - xs).max() <= 1e-14


def test_box_constrained_stays_feasible():
    q = QuadraticProblem(generate_synthetic(8, 8, 5.0, 1.0, 0.0, seed=0).Q, np.full(8, 3.0))
    comp = CompositeProblem(q, SeparableRegularizer.box(-0.5, 0.5), 1.0)
    tr = run_prox_cd(comp, UniformIID(8, seed=0), StepRule.exact(), np.zeros(8), 500, 50)
    assert np.all(np.abs(tr.final_x) <= 0.5)
    assert np.all(np.isfinite(tr.objectives))


# Gauss-Seidel oracle

def test_gauss_seidel_identity_one_sweep():
    b = np.array([1.0, -2.0, 3.5])
    np.testing.assert_array_equal(gauss_seidel_normal_equations(np.eye(3), b, 1), b)


def test_gauss_seidel_zero_column_rejected():
    with pytest.raises(ValueError):
        gauss_seidel_normal_equations(np.array([[1.0, 0.0], [2.0, 0.0]]), np.ones(2), 1)


@pytest.mark.parametrize("omega", [0.0, 0.5])
def test_cd_matches_gauss_seidel_per_sweep(omega):
    rng = np.random.default_rng(7)
    A = rng.standard_normal((25, 10))
    b = rng.standard_normal(25)
    hist = gauss_seidel_normal_equations(A, b, 8, omega=omega, return_history=True)
    rule = StepRule.over_relaxed(omega) if omega else StepRule.exact()
    tr = run_cd(normal_equations_problem(A, b), Cyclic(10), rule, np.zeros(10), 80, 10,
                keep_iterates=True)
    for w_gs, w_cd in zip(hist, tr.snapshots):
        np.testing.assert_allclose(w_cd, w_gs, rtol=0, atol=1e-12)


def test_normal_equations_sparse_input():
    A = sp.random(20, 6, density=0.5, random_state=0, format="csr") + sp.eye(20, 6)
    q = normal_equations_problem(A, np.ones(20))
    np.testing.assert_allclose(q.to_dense(), (A.T @ A).toarray(), atol=1e-14)
