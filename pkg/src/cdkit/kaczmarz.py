"""Randomized Kaczmarz and its accelerated variant for consistent ``Aw = b``.

The accelerated method is provided twice. The dense form updates three
length-``n`` vectors per step. The sparse form carries ``[v y] = [vh yh] B``
for a 2x2 matrix ``B``, so each step touches only the nonzeros of the sampled
row. They run the same recursion on the same index stream, and the dense form
is the reference for the sparse one.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse.linalg as spla

from . import _kernels as K
from .problems import LinearSystemProblem
from .rng import SeedLike
from .schedules import UniformIID
from .trace import ConvergenceTrace, DivergenceError, Stopwatch, checkpoint_plan

DENSE_ORACLE_M = 256
DET_BAND = (1e-12, 1e12)
ROW_NORM_TOL = 1e-8


def _row(system: LinearSystemProblem, i: int):
    A = system.A
    lo, hi = A.indptr[i], A.indptr[i + 1]
    return A.indices[lo:hi], A.data[lo:hi]


def kaczmarz_step(system: LinearSystemProblem, w, i: int) -> np.ndarray:
    """Project ``w`` onto the hyperplane ``A_i w = b_i`` (returns a new vector)."""
    if not 0 <= i < system.m:
        raise IndexError(f"row {i} out of range")
    cols, vals = _row(system, i)
    nrm = math.sqrt(float(vals @ vals))
    if abs(nrm - 1.0) > ROW_NORM_TOL:
        raise ValueError(f"row {i} has norm {nrm!r}; rows must be unit norm")
    w = np.array(w, dtype=np.float64)
    res = float(vals @ w[cols]) - system.b[i]
    w[cols] -= res * vals
    return w


# --------------------------------------------------------------------------
# solution-set geometry
# --------------------------------------------------------------------------

def _pinv(system):
    P = getattr(system, "_pinv", None)
    if P is None:
        P = np.linalg.pinv(system.A.toarray())
        system._pinv = P
    return P


def projection_to_solution_set(system: LinearSystemProblem, w, tol: float = 1e-12) -> np.ndarray:
    """``w - A^T (A A^T)^+ (Aw - b)``, the nearest solution of ``Aw = b``.

    Uses the pseudoinverse for ``m <= 256`` and an LSQR least-squares solve of
    ``A d = Aw - b`` otherwise (LSQR from zero returns the min-norm ``d``).
    """
    w = np.asarray(w, dtype=np.float64)
    r = system.A @ w - system.b
    if system.m <= DENSE_ORACLE_M:
        return w - _pinv(system) @ r
    if not np.any(r):
        return w.copy()
    out = spla.lsqr(system.A, r, atol=tol, btol=tol, iter_lim=20 * max(system.m, system.n))
    istop = out[1]
    if istop not in (0, 1, 2, 4, 5):
        raise RuntimeError(f"inner least-squares solve did not converge (istop={istop})")
    return w - out[0]


def distance_sq(system: LinearSystemProblem, w) -> float:
    """``||w - P(w)||^2``."""
    return float(np.sum((w - projection_to_solution_set(system, w)) ** 2))


def lambda_min_nz(system: LinearSystemProblem) -> float:
    """Smallest nonzero eigenvalue of ``A A^T`` (dense eigendecomposition, cached)."""
    lam = getattr(system, "_lambda_min_nz", None)
    if lam is None:
        G = (system.A @ system.A.T).toarray()
        ev = np.linalg.eigvalsh(0.5 * (G + G.T))
        tol = 10.0 * system.m * np.finfo(float).eps * max(ev[-1], 1e-300)
        nz = ev[ev > tol]
        lam = float(nz[0]) if nz.size else 0.0
        system._lambda_min_nz = lam
    return lam


def default_sigma(system: LinearSystemProblem) -> float:
    """``lambda_min_nz(A A^T)`` for ``m <= 256``, else 0.

    It is also 0 for ``m = 1``, where the modulus equals ``m^2`` and the
    coefficient formulas degenerate.
    """
    if system.m > DENSE_ORACLE_M:
        return 0.0
    lam = lambda_min_nz(system)
    return lam if lam < system.m ** 2 else 0.0


# --------------------------------------------------------------------------
# drivers
# --------------------------------------------------------------------------

class _Recorder:
    """Shared checkpoint bookkeeping for the Kaczmarz drivers."""

    def __init__(self, system, w0, label, seed, keep_iterates):
        self.system = system
        self.trace = ConvergenceTrace(label=label, seed=seed)
        self.trace.snapshots = [] if keep_iterates else None
        self.gap0 = distance_sq(system, w0)
        self.limit = 1e8 * max(self.gap0, 1.0)
        self._add(0, w0, 0, 0)

    def _add(self, k, w, wall, flops):
        res = self.system.A @ w - self.system.b
        gap = distance_sq(self.system, w)
        self.trace.record(k, float(res @ res), gap, wall, flops)
        if self.trace.snapshots is not None:
            self.trace.snapshots.append(np.array(w, copy=True))
        if not gap <= self.limit:
            self.trace.final_x = np.array(w, copy=True)
            self.trace.stopped = "diverged"
            raise DivergenceError(
                f"{self.trace.label}: distance to the solution set reached {gap!r}", self.trace)

    def add(self, k, w, wall, flops):
        self._add(k, w, wall, flops)

    def finish(self, w, k, **info):
        self.trace.final_x = np.array(w, copy=True)
        self.trace.info["iterations"] = k
        self.trace.info.update(info)
        return self.trace


def _start(system, w0):
    w = np.array(w0, dtype=np.float64)
    if w.shape != (system.n,):
        raise ValueError(f"w0 must have length {system.n}")
    return w


def run_randomized_kaczmarz(system: LinearSystemProblem, w0, budget: int, checkpoint_stride: int,
                            seed: SeedLike = 0, *, keep_iterates: bool = False,
                            label: str = "kaczmarz") -> ConvergenceTrace:
    """Kaczmarz projections onto uniformly sampled rows; gap is ``||w - P(w)||^2``."""
    w = _start(system, w0)
    indptr, indices, data = system.kernel_arrays()
    rec = _Recorder(system, w, label, seed, keep_iterates)
    schedule = UniformIID(system.m, seed)
    clock = Stopwatch()
    flops = done = 0
    for k_next in checkpoint_plan(budget, checkpoint_stride)[1:]:
        idx = schedule.take(k_next - done)
        with clock:
            flops += K.kaczmarz_csr(indptr, indices, data, system.b, w, idx)
        done = k_next
        rec.add(done, w, clock.total, flops)
    return rec.finish(w, done)


def _sigma_for(system, sigma):
    if sigma is None:
        sigma = default_sigma(system)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if system.m ** 2 <= sigma:
        raise ValueError("need m^2 > sigma")
    return float(sigma)


def run_accel_kaczmarz_dense(system: LinearSystemProblem, w0, sigma: float | None = None,
                             budget: int = 1000, checkpoint_stride: int = 100,
                             seed: SeedLike = 0, *, keep_iterates: bool = False,
                             label: str = "accel-dense") -> ConvergenceTrace:
    """Accelerated randomized Kaczmarz, reference form with ``O(n)`` work per step.

    The coefficient recursion uses the number of rows ``m``, the dimension of
    the dual variable being sampled. ``trace.info["v"]`` is the final momentum
    vector.
    """
    sigma = _sigma_for(system, sigma)
    w = _start(system, w0)
    v = w.copy()
    y = np.empty_like(w)
    indptr, indices, data = system.kernel_arrays()
    rec = _Recorder(system, w, label, seed, keep_iterates)
    schedule = UniformIID(system.m, seed)
    clock = Stopwatch()
    gamma = 0.0
    flops = done = 0
    for k_next in checkpoint_plan(budget, checkpoint_stride)[1:]:
        idx = schedule.take(k_next - done)
        with clock:
            gamma, fl = K.ark_dense(indptr, indices, data, system.b, w, v, y, idx, sigma, gamma)
        flops += fl
        done = k_next
        rec.add(done, w, clock.total, flops)
    return rec.finish(w, done, v=v, sigma=sigma, gamma_last=gamma)


def reconstruct(vh, yh, B) -> tuple[np.ndarray, np.ndarray]:
    """``(v, y) = [vh yh] B`` with ``B`` given row-major as a length-4 array or 2x2."""
    B = np.asarray(B, dtype=np.float64).reshape(2, 2)
    return vh * B[0, 0] + yh * B[1, 0], vh * B[0, 1] + yh * B[1, 1]


def run_accel_kaczmarz_sparse(system: LinearSystemProblem, w0, sigma: float | None = None,
                              budget: int = 1000, checkpoint_stride: int = 100,
                              seed: SeedLike = 0, *, renormalize: str = "auto",
                              keep_iterates: bool = False,
                              label: str = "accel-sparse") -> ConvergenceTrace:
    """Accelerated randomized Kaczmarz with ``O(|A_i|)`` work per step.

    ``renormalize`` is ``"auto"`` (fold ``B`` into the vectors when ``|det B|``
    leaves ``[1e-12, 1e12]``), ``"always"`` or ``"never"``. The primal iterate
    is rebuilt densely only at checkpoints, and that work is not counted in
    ``flops``. ``trace.info`` holds the final ``vh``, ``yh``, ``B``, the
    reconstructed ``v`` and the number of folds.

    Raises
    ------
    FloatingPointError
        If ``B`` stays outside the determinant band even after folding.
    """
    if renormalize not in ("auto", "always", "never"):
        raise ValueError("renormalize must be 'auto', 'always' or 'never'")
    sigma = _sigma_for(system, sigma)
    w = _start(system, w0)
    vh = w.copy()
    yh = w.copy()
    B = np.array([1.0, 0.0, 0.0, 1.0])
    det_lo, det_hi = (0.0, math.inf) if renormalize == "never" else DET_BAND
    always = renormalize == "always"
    indptr, indices, data = system.kernel_arrays()
    rec = _Recorder(system, w, label, seed, keep_iterates)
    schedule = UniformIID(system.m, seed)
    clock = Stopwatch()
    gamma = 0.0
    flops = folds = done = 0
    for k_next in checkpoint_plan(budget, checkpoint_stride)[1:]:
        idx = schedule.take(k_next - done)
        with clock:
            gamma, fl, nf, status = K.ark_sparse(indptr, indices, data, system.b, vh, yh, B, idx,
                                                 sigma, gamma, w, always, det_lo, det_hi)
        flops += fl
        folds += nf
        done = k_next
        if status == K.STATUS_SINGULAR:
            raise FloatingPointError(f"{label}: change-of-variables matrix became singular "
                                     f"at iteration {done}")
        rec.add(done, w, clock.total, flops)
    v, _ = reconstruct(vh, yh, B)
    return rec.finish(w, done, v=v, vh=vh, yh=yh, B=B.reshape(2, 2).copy(), folds=folds,
                      sigma=sigma, gamma_last=gamma)
