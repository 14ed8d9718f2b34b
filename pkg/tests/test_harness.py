import json
import math

import numpy as np
import pytest

from cdkit import cli
from cdkit.bounds import (THEOREM_IDS, BoundEnvelope, EnvelopeError, bound_envelope, mean_gap,
                          verify_envelope)
from cdkit.grid import ExperimentGrid, run_experiment_grid, run_full_gradient
from cdkit.io import (config_hash, problem_from_descriptor, read_matrix, read_vector, write_matrix,
                      write_problem, write_vector)
from cdkit.problems import (CompositeProblem, LinearSystemProblem, QuadraticProblem,
                            SeparableRegularizer, generate_linear_system, generate_synthetic)
from cdkit.reference import (CertificationError, prox_fixed_point_residual, reference_optimum,
                             solution_set_projection)
from cdkit.schedules import Cyclic, StepRule, UniformIID
from cdkit.serial import run_cd
from cdkit.trace import ConvergenceTrace


def _trace(ks, gaps, seed=0):
    t = ConvergenceTrace(label="t", seed=seed)
    for k, g in zip(ks, gaps):
        t.record(int(k), float(g), float(g), 0, 0)
    return t


# reference optimum

def test_reference_identity():
    q = QuadraticProblem(np.eye(2), [1.0, 2.0])
    fs, xs = reference_optimum(q)
    np.testing.assert_allclose(xs, [1.0, 2.0], atol=1e-13)
    assert fs == pytest.approx(-2.5, abs=1e-13)


def test_reference_composite_soft_threshold():
    comp = CompositeProblem(QuadraticProblem(np.eye(2), [2.0, 0.0]), SeparableRegularizer.l1(), 1.0)
    hs, xs = reference_optimum(comp)
    np.testing.assert_allclose(xs, [1.0, 0.0], atol=1e-13)
    assert hs == pytest.approx(0.5 - 2.0 + 1.0, abs=1e-13)
    assert prox_fixed_point_residual(comp, xs) <= 1e-10


def test_reference_lambda_zero_is_smooth():
    q = QuadraticProblem(generate_synthetic(6, 6, 3.0, 1.0, 0.0, seed=0).Q, np.arange(6.0))
    comp = CompositeProblem(q, SeparableRegularizer.l1(), 0.0)
    hs, xs = reference_optimum(comp)
    fs, xs2 = reference_optimum(q)
    assert hs == fs
    np.testing.assert_array_equal(xs, xs2)


def test_reference_singular_min_norm():
    q = QuadraticProblem(np.diag([1.0, 0.0]), [2.0, 0.0])
    fs, xs = reference_optimum(q)
    np.testing.assert_allclose(xs, [2.0, 0.0], atol=1e-14)
    assert fs == pytest.approx(-2.0)


def test_reference_certificate_failure():
    # b outside the range of Q: no stationary point exists
    q = QuadraticProblem(np.diag([1.0, 0.0]), [1.0, 1.0])
    with pytest.raises(CertificationError):
        reference_optimum(q)


def test_solution_set_projection_lowrank_vs_dense():
    lr = generate_synthetic(40, 8, 5.0, 1.0, 0.0, seed=1, storage="lowrank")
    dense = QuadraticProblem(lr.to_dense())
    x = np.random.default_rng(0).standard_normal(40)
    np.testing.assert_allclose(solution_set_projection(lr, x), solution_set_projection(dense, x),
                               atol=1e-10)


# envelopes

def test_randomized_sublinear_value():
    q = QuadraticProblem(np.eye(10), known_fstar=0.0, known_xstar=np.zeros(10))
    # gap0 = 2, sigma = 1 gives R0^2 = 4
    x0 = np.zeros(10)
    x0[0] = 2.0
    env = bound_envelope("T1-sublinear", q, x0, [0, 80])
    assert env.params["R0_sq"] == 4.0
    assert env.values[1] == pytest.approx(1.0)
    assert math.isinf(env.values[0])


def test_randomized_linear_one_dimensional():
    q = QuadraticProblem(np.eye(1), known_xstar=[0.0])
    env = bound_envelope("T1-linear", q, np.ones(1), [0, 1, 2])
    assert env.values.tolist() == [0.5, 0.0, 0.0]


def test_rk_orthonormal_rows():
    s = LinearSystemProblem(np.eye(3), [1.0, 2.0, 3.0])
    env = bound_envelope("RK-linear", s, np.zeros(3), [0, 1, 5])
    np.testing.assert_allclose(env.values, 14.0 * (2 / 3) ** np.array([0, 1, 5]), rtol=1e-12)
    one = LinearSystemProblem(np.array([[1.0, 0.0]]), [2.0])
    assert bound_envelope("RK-linear", one, np.zeros(2), [0, 1]).values.tolist() == [4.0, 0.0]


def test_full_gradient_and_randomized_bounds_coincide():
    n = 5
    Q = np.ones((n, n)) + 1e-3 * np.eye(n)
    q = QuadraticProblem(Q / Q[0, 0])
    x0 = np.ones(n)
    ks = [1, 10, 100]
    fg = bound_envelope("FG-baseline", q, x0, ks).values
    t1 = bound_envelope("T1-sublinear", q, x0, ks).values
    np.testing.assert_allclose(fg / t1, 1.0, rtol=1e-3)


@pytest.mark.parametrize("tid", ["T1-linear", "T1-sublinear", "T2-accel", "T2-accel-linear",
                                 "T3-cyclic", "T3-cyclic-linear", "T6-sublinear", "T6-linear",
                                 "FG-baseline"])
def test_envelopes_positive_nonincreasing(tid):
    q = generate_synthetic(20, 20, 50.0, 1.0, 0.0, seed=0)
    ks = np.arange(0, 2001, 25)
    env = bound_envelope(tid, q, np.ones(20), ks)
    v = env.values[env.checked()]
    assert np.all(v >= 0)
    assert np.all(np.diff(v) <= 0)


def test_envelope_rejects_singular_for_sigma_bounds():
    q = generate_synthetic(10, 5, 10.0, 1.0, 0.0, seed=0)
    with pytest.raises(EnvelopeError):
        bound_envelope("T1-linear", q, np.ones(10), [0, 1])
    env = bound_envelope("T6-linear", q, np.ones(10), [0, 1])
    assert env.params["sigma"] > 0


def test_envelope_unknown_id():
    with pytest.raises(EnvelopeError):
        bound_envelope("T9", QuadraticProblem(np.eye(2)), np.ones(2), [0])
    assert "T4-prox-linear" in THEOREM_IDS


def test_cyclic_bound_checks_only_multiples_of_n():
    q = generate_synthetic(5, 5, 5.0, 1.0, 0.0, seed=0)
    env = bound_envelope("T3-cyclic", q, np.ones(5), [0, 3, 5, 7, 10])
    assert env.checked().tolist() == [False, False, True, False, True]
    assert env.values[1] == env.params["gap0"]


# verification

def test_verify_pass_fail_and_monotone_in_slack():
    env = BoundEnvelope("T1-linear", np.array([0, 1, 2]), np.array([1.0, 0.5, 0.25]))
    traces = [_trace([0, 1, 2], [1.0, 0.52, 0.2], s) for s in range(100)]
    assert not verify_envelope(traces, env, 1.0).passed
    rep = verify_envelope(traces, env, 1.1)
    assert rep.passed
    assert rep.worst_k == 1
    assert str(rep).startswith("PASS T1-linear")
    assert verify_envelope(traces, env, 2.0).passed


def test_verify_seed_count_rule():
    env = BoundEnvelope("T1-linear", np.array([0, 1]), np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        verify_envelope([_trace([0, 1], [1.0, 0.1])] * 10, env)
    det = BoundEnvelope("T3-cyclic", np.array([0, 1]), np.array([1.0, 0.5]))
    assert verify_envelope([_trace([0, 1], [1.0, 0.1])], det, 1.0).passed


def test_verify_diverged_trace_fails():
    env = BoundEnvelope("T3-cyclic", np.array([0, 1]), np.array([1.0, 0.5]))
    rep = verify_envelope([_trace([0, 1], [1.0, math.inf])], env, 1.0)
    assert not rep.passed
    assert "non-finite" in rep.message


def test_verify_mismatched_checkpoints():
    env = BoundEnvelope("T3-cyclic", np.array([0, 1]), np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        verify_envelope([_trace([0, 1], [1, 0]), _trace([0, 2], [1, 0])], env, 1.0)
    with pytest.raises(ValueError):
        verify_envelope([_trace([0, 2], [1, 0])], env, 1.0)


def test_mean_gap():
    ks, mg = mean_gap([_trace([0, 1], [1.0, 2.0]), _trace([0, 1], [3.0, 4.0])])
    assert ks.tolist() == [0, 1]
    assert mg.tolist() == [2.0, 3.0]


def test_cyclic_trace_under_t3_envelope():
    n = 10
    q = generate_synthetic(n, n, 20.0, 1.0, 0.0, seed=3)
    x0 = np.random.default_rng(0).standard_normal(n)
    tr = run_cd(q, Cyclic(n), StepRule.fixed_lmax(), x0, 20 * n, n)
    for tid in ("T3-cyclic", "T3-cyclic-linear"):
        assert verify_envelope([tr], bound_envelope(tid, q, x0, tr.ks), 1.0).passed


# full-gradient baseline and grid

def test_full_gradient_baseline_under_fg_envelope():
    q = generate_synthetic(15, 15, 10.0, 1.0, 0.0, seed=0)
    x0 = np.ones(15)
    tr = run_full_gradient(q, x0, 200, 10)
    env = bound_envelope("FG-baseline", q, x0, tr.ks)
    assert verify_envelope([tr], env, 1.0).passed


def test_grid_well_conditioned_cell(tmp_path):
    grid = ExperimentGrid(cells=[dict(n=20, r=20, cond=10, eta=1, zeta=0)], seeds=2)
    res = run_experiment_grid(grid, tmp_path)
    assert len(res["runs"]) == 12
    assert all(r["censored"] == 0 for r in res["runs"])
    assert {"iid_over_epochs", "cyclic_over_iid"} <= set(res["comparison"][0])
    for name in ("runs.csv", "summary.csv", "comparison.csv", "manifest.json"):
        assert (tmp_path / name).exists()


def test_grid_reproducible_from_config():
    cfg = {"cells": [dict(n=12, r=6, cond=30, eta=0.5, zeta=0.5)], "seeds": 2, "master_seed": 4}
    a = run_experiment_grid(ExperimentGrid.from_config(cfg))["runs"]
    b = run_experiment_grid(ExperimentGrid.from_config(json.loads(json.dumps(cfg))))["runs"]
    assert a == b


def test_grid_cap_censors():
    grid = ExperimentGrid(cells=[dict(n=20, r=20, cond=1e4, eta=1, zeta=0)], seeds=1, cap=50)
    runs = run_experiment_grid(grid)["runs"]
    assert all(r["censored"] == 1 and r["iterations"] == 50 for r in runs)


def test_grid_validation():
    with pytest.raises(ValueError):
        ExperimentGrid(cells=[])
    with pytest.raises(ValueError):
        ExperimentGrid.from_config({"cells": [dict(n=2, r=2, cond=1, eta=1, zeta=0)], "bogus": 1})


# io

def test_matrix_and_vector_roundtrip(tmp_path):
    q = generate_synthetic(6, 3, 5.0, 0.5, 0.1, seed=2)
    p = write_matrix(tmp_path / "Q.mtx", q.Q)
    np.testing.assert_array_equal(read_matrix(p).toarray(), q.Q)
    v = np.random.default_rng(0).standard_normal(5)
    np.testing.assert_array_equal(read_vector(write_vector(tmp_path / "v.vec", v)), v)


def test_descriptor_roundtrip(tmp_path):
    desc = {"kind": "synthetic", "n": 8, "r": 4, "cond": 10.0, "eta": 0.5, "zeta": 0.0, "seed": 3}
    q = problem_from_descriptor(desc)
    files = write_problem(tmp_path, q)
    again = problem_from_descriptor({"kind": "files", "matrix": str(tmp_path / files["matrix"]),
                                     "rhs": str(tmp_path / files["rhs"])})
    np.testing.assert_array_equal(again.to_dense(), q.to_dense())
    assert config_hash(desc) == config_hash(dict(reversed(list(desc.items()))))


def test_linear_system_descriptor():
    s = problem_from_descriptor({"kind": "linear_system", "m": 10, "n": 8, "density": 0.5, "seed": 1})
    assert isinstance(s, LinearSystemProblem)
    with pytest.raises(ValueError):
        problem_from_descriptor({"kind": "mystery"})


# command line

def test_cli_run_and_verify(tmp_path, capsys):
    cfg = {"problem": {"kind": "synthetic", "n": 10, "r": 10, "cond": 5, "eta": 1, "zeta": 0,
                       "seed": 0},
           "algo": "cd", "schedule": "iid", "step": "fixed_lmax", "budget": 200, "stride": 20,
           "seeds": 100}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(manifest["config"])
    code = cli.main(["verify", "--config", str(path), "--traces", str(tmp_path / "out"),
                     "--theorem", "T1-linear", "--out", str(tmp_path / "rep.json")])
    assert code == 0
    assert "PASS T1-linear" in capsys.readouterr().out
    # at k = 0 the bound equals the mean gap, so slack below one must fail
    assert cli.main(["verify", "--config", str(path), "--traces", str(tmp_path / "out"),
                     "--theorem", "T1-linear", "--slack", "0.5"]) == 1


def test_cli_gen_kaczmarz_async(tmp_path):
    out = tmp_path / "sys"
    assert cli.main(["gen", "--kind", "linear_system", "--m", "20", "--n", "15", "--density",
                     "0.3", "--seed", "1", "--out", str(out)]) == 0
    for algo in ("plain", "accel-dense", "accel-sparse"):
        trace = tmp_path / f"{algo}.csv"
        assert cli.main(["kaczmarz", "--matrix", str(out / "A.mtx"), "--rhs", str(out / "b.vec"),
                         "--algo", algo, "--iters", "5000", "--trace", str(trace)]) == 0
        assert ConvergenceTrace.from_csv(trace).gaps[-1] < 1e-3
    prob = tmp_path / "p.json"
    prob.write_text(json.dumps({"kind": "sparse", "n": 300, "nnz_per_row": 4, "seed": 0}))
    for policy in ("real", "noDelay", "worst:2", "random:2", "fixedAge:1"):
        trace = tmp_path / "a.csv"
        assert cli.main(["async", "--config", str(prob), "--policy", policy, "--iters", "3000",
                         "--trace", str(trace)]) == 0
        header = trace.read_text().splitlines()[0]
        assert header == "k,objective,gap,wall_ns,flops,rho_diag,policy,threads"


def test_cli_grid(tmp_path):
    cfg = tmp_path / "grid.json"
    cfg.write_text(json.dumps({"cells": [dict(n=8, r=8, cond=5, eta=1, zeta=0)], "seeds": 1}))
    assert cli.main(["grid", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "comparison.csv").exists()
