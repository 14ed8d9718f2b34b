"""Serial coordinate descent drivers (plain and proximal) and the Gauss-Seidel oracle."""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .problems import (CompositeProblem, LinearSystemProblem, PowellProblem,
                       QuadraticProblem, SeparableRegularizer, coordinate_profile,
                       powell_coordinate_min)
from .schedules import IndexSchedule, StepRule, step_vector
from .trace import ConvergenceTrace, DivergenceError, Stopwatch, checkpoint_plan

DIVERGENCE_FACTOR = 1e8


def divergence_limit(f0: float, fstar: float | None = None) -> float:
    """Largest admissible ``|f|`` before a run is declared divergent."""
    scale = max(abs(f0), 1.0 if fstar is None or math.isnan(fstar) else max(abs(fstar), 1.0))
    return DIVERGENCE_FACTOR * scale


def _reference_value(problem) -> float:
    if isinstance(problem, CompositeProblem):
        v = problem.known_hstar
    else:
        v = getattr(problem, "known_fstar", None)
    return math.nan if v is None else float(v)


def _coordinate_loop(quad: QuadraticProblem, objective, fstar: float, steps: np.ndarray,
                     reg: SeparableRegularizer, threshold: float, schedule: IndexSchedule,
                     x0, budget: int, stride: int, target_gap, target_objective,
                     label: str, keep_iterates: bool) -> ConvergenceTrace:
    n = quad.n
    if schedule.n != n:
        raise ValueError(f"schedule dimension {schedule.n} does not match problem dimension {n}")
    x = np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    lo, hi = reg.bounds(n)
    code = reg.code
    lowrank = quad.storage == "lowrank"
    if lowrank:
        U = quad.factor.U
        state = U.T @ x
    else:
        indptr, indices, data = quad.kernel_arrays()
        state = quad.matvec(x) - quad.b
    f_smooth = quad.value(x)
    h0 = objective(x)
    limit = divergence_limit(h0, fstar)

    f_stop = -math.inf
    if target_gap is not None and not math.isnan(fstar) and code == K.REG_NONE:
        f_stop = fstar + float(target_gap)
    if target_objective is not None and code == K.REG_NONE:
        f_stop = max(f_stop, float(target_objective))

    trace = ConvergenceTrace(label=label, seed=getattr(schedule, "seed", None))
    trace.snapshots = [] if keep_iterates else None
    trace.record(0, h0, h0 - fstar, 0, 0)
    if keep_iterates:
        trace.snapshots.append(x.copy())
    clock = Stopwatch()
    flops = 0
    done = 0
    for k_next in checkpoint_plan(budget, stride)[1:]:
        idx = schedule.take(k_next - done)
        with clock:
            if lowrank:
                it, f_smooth, fl, status = K.cd_lowrank(
                    U, quad.diag, quad.b, x, state, idx, steps, code, threshold,
                    lo, hi, f_smooth, f_stop, limit)
            else:
                it, f_smooth, fl, status = K.cd_csr(
                    indptr, indices, data, quad.diag, quad.b, x, state, idx, steps,
                    code, threshold, lo, hi, f_smooth, f_stop, limit)
        done += it
        flops += fl
        h = objective(x)
        trace.record(done, h, h - fstar, clock.total, flops)
        if keep_iterates:
            trace.snapshots.append(x.copy())
        if status == K.STATUS_DIVERGED or not abs(h) <= limit:
            trace.final_x = x
            trace.stopped = "diverged"
            trace.info["iterations"] = done
            raise DivergenceError(
                f"{label}: objective {h!r} left the admissible range after {done} iterations",
                trace)
        if status == K.STATUS_TARGET or _reached(h, fstar, target_gap, target_objective):
            trace.stopped = "target"
            break
    trace.final_x = x
    trace.info["iterations"] = done
    return trace


def _reached(h, fstar, target_gap, target_objective) -> bool:
    if target_gap is not None and not math.isnan(fstar) and h - fstar <= target_gap:
        return True
    return target_objective is not None and h <= target_objective


def _powell_loop(problem: PowellProblem, schedule, step_rule, x0, budget, stride,
                 target_objective, label, keep_iterates) -> ConvergenceTrace:
    if step_rule.kind != "exact":
        raise ValueError("Powell's function supports only exact coordinate minimization")
    if schedule.n != 3:
        raise ValueError("Powell's function is three-dimensional")
    x = np.array(x0, dtype=np.float64)
    trace = ConvergenceTrace(label=label, seed=getattr(schedule, "seed", None))
    trace.snapshots = [] if keep_iterates else None
    f = problem.value(x)
    limit = divergence_limit(f)
    trace.record(0, f, math.nan, 0, 0)
    if keep_iterates:
        trace.snapshots.append(x.copy())
    clock = Stopwatch()
    done = 0
    stop = False
    for k_next in checkpoint_plan(budget, stride)[1:]:
        idx = schedule.take(k_next - done)
        with clock:
            for i in idx:
                x[i] = powell_coordinate_min(x, int(i))
                done += 1
                f = problem.value(x)
                if target_objective is not None and f <= target_objective:
                    stop = True
                    break
        trace.record(done, f, math.nan, clock.total, 12 * done)
        if keep_iterates:
            trace.snapshots.append(x.copy())
        if not abs(f) <= limit:
            trace.final_x = x
            trace.stopped = "diverged"
            trace.info["iterations"] = done
            raise DivergenceError(f"{label}: objective {f!r} left the admissible range", trace)
        if stop:
            trace.stopped = "target"
            break
    trace.final_x = x
    trace.info["iterations"] = done
    return trace


def run_cd(problem, schedule: IndexSchedule, step_rule: StepRule, x0, budget: int,
           checkpoint_stride: int, target_gap: float | None = None, *,
           target_objective: float | None = None, label: str | None = None,
           keep_iterates: bool = False) -> ConvergenceTrace:
    """Coordinate descent ``x_i <- x_i - alpha_i [grad f(x)]_i`` on one coordinate per iteration.

    Runs until ``budget`` iterations, or until ``f - f* <= target_gap`` (when
    ``f*`` is known) or ``f <= target_objective``. For a
    :class:`LinearSystemProblem` the iteration runs on the dual and the primal
    iterate ``A^T x`` is stored in ``trace.info["primal"]``.

    Raises
    ------
    DivergenceError
        If ``|f|`` grows beyond ``1e8`` times its initial scale.
    """
    label = label or f"cd/{schedule.name}/{step_rule.label}"
    if isinstance(problem, PowellProblem):
        return _powell_loop(problem, schedule, step_rule, x0, budget, checkpoint_stride,
                            target_objective, label, keep_iterates)
    if isinstance(problem, CompositeProblem):
        return run_prox_cd(problem, schedule, step_rule, x0, budget, checkpoint_stride,
                           label=label, keep_iterates=keep_iterates)
    if isinstance(problem, LinearSystemProblem):
        quad = problem.dual_quadratic()
        trace = _coordinate_loop(quad, quad.value, _reference_value(problem),
                                 step_vector(step_rule, coordinate_profile(quad)),
                                 SeparableRegularizer.none(), 0.0, schedule, x0, budget,
                                 checkpoint_stride, target_gap, target_objective, label,
                                 keep_iterates)
        trace.info["primal"] = problem.primal(trace.final_x)
        return trace
    if not isinstance(problem, QuadraticProblem):
        raise TypeError(f"unsupported problem type {type(problem).__name__}")
    steps = step_vector(step_rule, coordinate_profile(problem))
    return _coordinate_loop(problem, problem.value, _reference_value(problem), steps,
                            SeparableRegularizer.none(), 0.0, schedule, x0, budget,
                            checkpoint_stride, target_gap, target_objective, label,
                            keep_iterates)


def run_prox_cd(problem: CompositeProblem, schedule: IndexSchedule, step_rule: StepRule,
                x0, budget: int, checkpoint_stride: int, target_gap: float | None = None, *,
                label: str | None = None, keep_iterates: bool = False) -> ConvergenceTrace:
    """Proximal coordinate descent ``x_i <- shrink(lam*alpha, x_i - alpha g_i)``.

    With no regularizer (or ``lam = 0``) this executes the same arithmetic as
    :func:`run_cd`, so traces agree bit for bit.
    """
    if not isinstance(problem, CompositeProblem):
        raise TypeError("run_prox_cd needs a CompositeProblem")
    label = label or f"prox/{schedule.name}/{step_rule.label}"
    quad = problem.smooth
    steps = step_vector(step_rule, coordinate_profile(quad))
    reg = problem.reg
    if problem.lam == 0.0 and reg.kind == "l1":
        reg = SeparableRegularizer.none()
    return _coordinate_loop(quad, problem.value, _reference_value(problem), steps, reg,
                            problem.threshold_scale, schedule, x0, budget,
                            checkpoint_stride, target_gap, None, label, keep_iterates)


def normal_equations_problem(A, b) -> QuadraticProblem:
    """``1/2 ||Aw - b||^2`` as the quadratic ``1/2 w^T (A^T A) w - (A^T b)^T w`` (constant dropped)."""
    A = sp.csr_matrix(A, dtype=np.float64)
    M = (A.T @ A).tocsr()
    M = 0.5 * (M + M.T)
    return QuadraticProblem(M, A.T @ np.asarray(b, dtype=np.float64))


def gauss_seidel_normal_equations(A, b, sweeps: int, omega: float = 0.0, w0=None,
                                  return_history: bool = False):
    """Cyclic (over-relaxed) Gauss-Seidel sweeps on ``A^T A w = A^T b``.

    Each coordinate update is scaled by ``1 + omega``; ``omega = 0`` is plain
    Gauss-Seidel. Returns the final iterate, or with ``return_history`` the
    list of iterates after each sweep (starting with ``w0``).
    """
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)
    M = Ad.T @ Ad
    c = Ad.T @ np.asarray(b, dtype=np.float64)
    d = np.diag(M)
    if np.any(d == 0):
        raise ValueError(f"A^T A has a zero diagonal entry at {int(np.flatnonzero(d == 0)[0])}")
    n = M.shape[0]
    w = np.zeros(n) if w0 is None else np.array(w0, dtype=np.float64)
    history = [w.copy()]
    for _ in range(sweeps):
        for j in range(n):
            w[j] += (1.0 + omega) * (c[j] - M[j] @ w) / d[j]
        history.append(w.copy())
    return history if return_history else w
