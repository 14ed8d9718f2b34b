"""Reference optima used to turn objective values into gaps.

Smooth quadratics are solved by conjugate gradients, composite problems by
proximal CD run to a fixed point. Every result is checked against a
certificate before it is returned.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse.linalg as spla

from .problems import (CompositeProblem, LinearSystemProblem, QuadraticProblem,
                       cached_profile, shrink_vector)
from .schedules import Cyclic, StepRule

SMOOTH_CERT = 1e-10
PROX_CERT = 1e-10


class CertificationError(RuntimeError):
    pass


def _operator(q: QuadraticProblem):
    return spla.LinearOperator((q.n, q.n), matvec=q.matvec, dtype=np.float64)


def solution_set_projection(q: QuadraticProblem, x) -> np.ndarray:
    """Projection of ``x`` onto ``{z : Qz = b}`` (which must be nonempty)."""
    x = np.asarray(x, dtype=np.float64)
    r = q.matvec(x) - q.b
    if q.storage == "lowrank":
        U = q.factor.U
        ev, W = q.factor.gram_eigh
        # min-norm d with U U^T d = r is U (G^+)^2 U^T r
        keep = ev > 10.0 * ev.size * np.finfo(float).eps * max(ev[-1], 1e-300)
        inv2 = np.where(keep, 1.0 / np.where(keep, ev, 1.0) ** 2, 0.0)
        c = W @ (inv2 * (W.T @ (U.T @ r)))
        return x - U @ c
    if q.n <= 4096:
        return x - np.linalg.lstsq(q.to_dense(), r, rcond=None)[0]
    d = spla.lsqr(_operator(q), r, atol=1e-14, btol=1e-14, iter_lim=20 * q.n)[0]
    return x - d


def _certify_smooth(q, x):
    res = np.linalg.norm(q.matvec(x) - q.b)
    if res > SMOOTH_CERT * (1.0 + np.linalg.norm(q.b)):
        raise CertificationError(f"stationarity residual {res:.3e} too large")


def prox_fixed_point_residual(problem: CompositeProblem, x) -> float:
    """``max_i |x_i - shrink(lam/Q_ii, x_i - g_i/Q_ii)|``, zero exactly at minimizers."""
    q = problem.smooth
    d = q.diag
    pos = d > 0
    a = np.where(pos, 1.0 / np.where(pos, d, 1.0), 0.0)
    g = q.matvec(x) - q.b
    z = shrink_vector(problem.lam * a, x - a * g, problem.reg)
    return float(np.abs(z - x).max())


def reference_optimum(problem, tol: float = 1e-13, max_rounds: int = 2000):
    """Return ``(f*, x*)`` (or ``(h*, x*)``) and store them on the problem.

    Strongly convex quadratics are solved by CG; singular ones get the
    minimum-norm solution. Composite problems run cyclic proximal CD with
    exact steps until the fixed-point residual falls below ``tol``.

    Raises
    ------
    CertificationError
        If the stationarity residual exceeds ``1e-10 (1 + ||b||)`` or the
        composite fixed-point residual exceeds ``1e-10``.
    """
    if isinstance(problem, LinearSystemProblem):
        from .kaczmarz import projection_to_solution_set
        w = projection_to_solution_set(problem, np.zeros(problem.n))
        return -0.5 * float(w @ w), None
    if isinstance(problem, CompositeProblem):
        if problem.lam == 0.0 or problem.reg.kind == "none":
            fs, xs = reference_optimum(problem.smooth, tol)
            problem.known_hstar = fs
            return fs, xs
        return _composite_optimum(problem, tol, max_rounds)
    if not isinstance(problem, QuadraticProblem):
        raise TypeError(f"no reference optimum for {type(problem).__name__}")
    if problem.known_xstar is not None and problem.known_fstar is not None:
        return problem.known_fstar, problem.known_xstar
    prof = cached_profile(problem, compute_sigma=True)
    singular = prof.sigma_computed and prof.sigma == 0.0
    if singular:
        x = solution_set_projection(problem, np.zeros(problem.n))
    else:
        x, info = spla.cg(_operator(problem), problem.b, rtol=tol, atol=0.0,
                          maxiter=max(50 * problem.n, 1000))
        if info != 0 and problem.n <= 4096:
            x = np.linalg.solve(problem.to_dense(), problem.b)
    _certify_smooth(problem, x)
    fs = float(-0.5 * problem.b @ x)
    problem.known_xstar = x
    problem.known_fstar = fs
    return fs, x


def _composite_optimum(problem: CompositeProblem, tol, max_rounds):
    from .serial import run_prox_cd
    n = problem.n
    lo, hi = problem.reg.bounds(n)
    x = np.clip(np.zeros(n), lo, hi)
    res = math.inf
    for _ in range(max_rounds):
        tr = run_prox_cd(problem, Cyclic(n), StepRule.exact(), x, 20 * n, 20 * n,
                         label="reference")
        x = tr.final_x
        res = prox_fixed_point_residual(problem, x)
        if res <= tol:
            break
    if res > PROX_CERT:
        raise CertificationError(f"fixed-point residual {res:.3e} too large")
    hs = problem.value(x)
    problem.known_hstar = hs
    problem.reference_x = x
    return hs, x
