"""Accelerated randomized coordinate descent.

Three sequences are carried: ``x`` (the iterate), ``v`` (the momentum
point) and ``y = alpha v + (1 - alpha) x`` (where the gradient component is
evaluated). Each step solves a scalar quadratic for ``gamma_k``, from which
``alpha_k`` and ``beta_k`` follow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .problems import QuadraticProblem, cached_profile, coordinate_profile
from .rng import SeedLike
from .schedules import UniformIID
from .trace import ConvergenceTrace, DivergenceError, Stopwatch, checkpoint_plan
from .serial import divergence_limit


@dataclass(frozen=True)
class AccelCoefficients:
    gamma: float
    alpha: float
    beta: float


@dataclass
class AccelState:
    x: np.ndarray
    v: np.ndarray
    y: np.ndarray
    k: int = 0
    gamma_prev: float = 0.0

    @classmethod
    def start(cls, x0) -> "AccelState":
        x = np.array(x0, dtype=np.float64)
        return cls(x=x, v=x.copy(), y=x.copy())


def gamma_next(gamma_prev: float, sigma: float, n: float) -> float:
    """Larger root of ``g^2 - g/n = (1 - g sigma/n) gamma_prev^2``."""
    if gamma_prev < 0 or sigma < 0 or n < 1:
        raise ValueError("need gamma_prev >= 0, sigma >= 0, n >= 1")
    return K.gamma_root(float(gamma_prev), float(sigma), float(n))


def alpha_beta(gamma: float, sigma: float, n: float) -> AccelCoefficients:
    n = float(n)
    if n * n <= sigma:
        raise ValueError("need n^2 > sigma")
    if gamma * sigma >= n:
        raise ValueError("need gamma * sigma < n")
    return AccelCoefficients(gamma, K.accel_alpha(gamma, sigma, n), 1.0 - gamma * sigma / n)


def coefficient_sequence(count: int, sigma: float, n: int) -> list[AccelCoefficients]:
    """The first ``count`` coefficient triples of a run (they do not depend on the data)."""
    out = []
    g = 0.0
    for _ in range(count):
        g = gamma_next(g, sigma, n)
        out.append(alpha_beta(g, sigma, n))
    return out


def default_sigma(problem: QuadraticProblem) -> float:
    """Smallest eigenvalue when it can be computed, else 0."""
    prof = cached_profile(problem, compute_sigma=True)
    return prof.sigma if prof.sigma_computed else 0.0


def run_accel_cd(problem: QuadraticProblem, x0, sigma: float | None = None, budget: int = 1000,
                 checkpoint_stride: int = 100, seed: SeedLike = 0, *,
                 use_lmax: bool = False, target_gap: float | None = None,
                 label: str = "accel", keep_iterates: bool = False) -> ConvergenceTrace:
    """Accelerated randomized CD on a quadratic with uniform index sampling.

    Parameters
    ----------
    sigma : float, optional
        Lower bound on the strong convexity modulus; defaults to the smallest
        eigenvalue of ``Q`` when available. Overstating it is not detected.
    use_lmax : bool
        Use ``L_max`` in place of the per-coordinate ``L_i``.
    seed
        Seeds the index stream exactly as :class:`UniformIID` does.
    """
    if not isinstance(problem, QuadraticProblem) or problem.storage == "lowrank":
        raise TypeError("run_accel_cd needs a dense or CSR QuadraticProblem")
    n = problem.n
    prof = coordinate_profile(problem)
    if sigma is None:
        sigma = default_sigma(problem)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if n * n <= sigma:
        raise ValueError("need n^2 > sigma")
    if prof.has_zero:
        raise ValueError("accelerated CD needs L_i > 0 for every coordinate")
    lc = np.full(n, prof.l_max) if use_lmax else prof.per_coordinate.copy()
    x = np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    v = x.copy()
    qx = problem.matvec(x)
    qv = qx.copy()
    y = np.empty(n)
    qy = np.empty(n)
    indptr, indices, data = problem.kernel_arrays()
    fstar = math.nan if problem.known_fstar is None else problem.known_fstar
    f0 = problem.value(x)
    limit = divergence_limit(f0, fstar)
    f_stop = fstar + target_gap if target_gap is not None and not math.isnan(fstar) else -math.inf

    schedule = UniformIID(n, seed)
    trace = ConvergenceTrace(label=label, seed=seed)
    trace.snapshots = [] if keep_iterates else None
    trace.record(0, f0, f0 - fstar, 0, 0)
    if keep_iterates:
        trace.snapshots.append(x.copy())
    clock = Stopwatch()
    gamma = 0.0
    flops = 0
    done = 0
    for k_next in checkpoint_plan(budget, checkpoint_stride)[1:]:
        idx = schedule.take(k_next - done)
        with clock:
            it, gamma, fl, status = K.accel_csr(indptr, indices, data, problem.b, x, v, qx, qv,
                                                y, qy, idx, lc, float(sigma), gamma, f_stop, limit)
        done += it
        flops += fl
        f = problem.value(x)
        trace.record(done, f, f - fstar, clock.total, flops)
        if keep_iterates:
            trace.snapshots.append(x.copy())
        if status == K.STATUS_DIVERGED or not abs(f) <= limit:
            trace.final_x = x
            trace.info["iterations"] = done
            trace.stopped = "diverged"
            raise DivergenceError(f"{label}: objective {f!r} left the admissible range", trace)
        if status == K.STATUS_TARGET or (not math.isnan(fstar) and target_gap is not None
                                         and f - fstar <= target_gap):
            trace.stopped = "target"
            break
    trace.final_x = x
    trace.info.update(iterations=done, sigma=float(sigma), gamma_last=gamma,
                      v=v, use_lmax=use_lmax)
    return trace
