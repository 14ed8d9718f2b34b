"""Objective families, their gradients, Lipschitz data and instance generators.

Four families are built in:

* :class:`QuadraticProblem`, ``f(x) = 1/2 x^T Q x - b^T x`` with ``Q`` stored
  dense, as CSR, or as a low-rank factor ``Q = U U^T``;
* :class:`CompositeProblem`, ``h(x) = f(x) + lam * Omega(x)`` for a separable
  ``Omega`` with a closed-form shrink;
* :class:`LinearSystemProblem`, a consistent system ``Aw = b`` with unit-norm
  rows, optimized through its dual ``1/2 ||A^T x||^2 - b^T x``;
* :class:`PowellProblem`, the three-variable function on which cyclic exact
  minimization cycles.

Coordinates are 0-based throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .rng import SeedLike, make_rng

_SMALL_EIG_N = 64
_DENSE_SPECTRUM_N = 4096


# --------------------------------------------------------------------------
# matrix storage
# --------------------------------------------------------------------------

def as_csr(A) -> sp.csr_matrix:
    """Return ``A`` as float64 CSR with sorted, duplicate-free column indices."""
    M = sp.csr_matrix(A, dtype=np.float64, copy=True)
    M.sum_duplicates()
    M.sort_indices()
    return M


def csr_arrays(M: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The ``(indptr, indices, data)`` triplet in the dtypes the kernels expect."""
    return (np.ascontiguousarray(M.indptr, dtype=np.int64),
            np.ascontiguousarray(M.indices, dtype=np.int64),
            np.ascontiguousarray(M.data, dtype=np.float64))


def check_csr(M: sp.csr_matrix) -> None:
    """Validate the CSR layout invariants; raise ``ValueError`` on violation."""
    ip = M.indptr
    if ip.shape[0] != M.shape[0] + 1 or ip[0] != 0 or ip[-1] != M.nnz:
        raise ValueError("row offsets inconsistent with nnz")
    if np.any(np.diff(ip) < 0):
        raise ValueError("row offsets must be nondecreasing")
    idx = M.indices
    if idx.size and (idx.min() < 0 or idx.max() >= M.shape[1]):
        raise ValueError("column index out of range")
    for i in range(M.shape[0]):
        row = idx[ip[i]:ip[i + 1]]
        if row.size > 1 and np.any(np.diff(row) <= 0):
            raise ValueError(f"column indices of row {i} not strictly increasing")


@dataclass(frozen=True)
class LowRankFactor:
    """``Q = U U^T`` held through its ``n x r`` factor."""

    U: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "U", np.ascontiguousarray(self.U, dtype=np.float64))

    @property
    def shape(self):
        n = self.U.shape[0]
        return (n, n)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        """``U^T U``, which shares the nonzero spectrum of ``Q``."""
        return self.U.T @ self.U

    @cached_property
    def gram_eigh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.gram)


# --------------------------------------------------------------------------
# problem families
# --------------------------------------------------------------------------

class QuadraticProblem:
    """``f(x) = 1/2 x^T Q x - b^T x`` for symmetric positive semidefinite ``Q``.

    Parameters
    ----------
    Q : ndarray, sparse matrix or LowRankFactor
    linear_term : array_like, optional
        ``b``; zero when omitted.
    known_fstar, known_xstar : optional
        Reference optimum, used for gaps. ``known_xstar`` is checked against
        the stationarity condition ``Q x* = b``.
    """

    def __init__(self, Q, linear_term=None, known_fstar=None, known_xstar=None):
        if isinstance(Q, LowRankFactor):
            self.storage = "lowrank"
            self.factor = Q
            self.Q = Q
            U = Q.U
            self.diag = np.einsum("ij,ij->i", U, U)
            self._csr = None
        elif sp.issparse(Q):
            self.storage = "csr"
            self.Q = as_csr(Q)
            check_csr(self.Q)
            self.factor = None
            self._csr = self.Q
            self.diag = self.Q.diagonal().astype(np.float64)
        else:
            self.storage = "dense"
            self.Q = np.array(Q, dtype=np.float64)
            if self.Q.ndim != 2:
                raise ValueError("Q must be two-dimensional")
            self.factor = None
            self._csr = None
            self.diag = np.diag(self.Q).copy()
        n, n2 = self.Q.shape
        if n != n2:
            raise ValueError(f"Q must be square, got {self.Q.shape}")
        self.n = n
        self.b = (np.zeros(n) if linear_term is None
                  else np.array(linear_term, dtype=np.float64).reshape(-1))
        if self.b.shape != (n,):
            raise ValueError("linear term has the wrong length")
        self._arrays = None
        self.descriptor: dict | None = None
        self._check_symmetric()
        if np.any(self.diag < 0):
            raise ValueError("Q has a negative diagonal entry, so it is not PSD")
        self.known_fstar = None if known_fstar is None else float(known_fstar)
        self.known_xstar = None
        if known_xstar is not None:
            xs = np.array(known_xstar, dtype=np.float64).reshape(-1)
            res = np.linalg.norm(self.matvec(xs) - self.b)
            if res > 1e-8 * np.linalg.norm(self.b) + 1e-12:
                raise ValueError(f"known_xstar is not stationary (residual {res:.3e})")
            self.known_xstar = xs
            if self.known_fstar is None:
                self.known_fstar = float(-0.5 * self.b @ xs)

    def _check_symmetric(self):
        if self.storage == "lowrank":
            return
        if self.storage == "dense":
            scale = np.abs(self.Q).max(initial=0.0)
            asym = np.abs(self.Q - self.Q.T).max(initial=0.0)
        else:
            scale = np.abs(self.Q.data).max(initial=0.0)
            D = self.Q - self.Q.T
            asym = np.abs(D.data).max(initial=0.0)
        if asym > 1e-12 * max(scale, 1e-300):
            raise ValueError(f"Q is not symmetric (max asymmetry {asym:.3e})")

    # ---- storage views -----------------------------------------------------
    @property
    def csr(self) -> sp.csr_matrix:
        if self.storage == "lowrank":
            raise TypeError("low-rank storage has no CSR view")
        if self._csr is None:
            self._csr = as_csr(self.Q)
        return self._csr

    def kernel_arrays(self):
        """CSR triplet for the compiled kernels (cached)."""
        if self._arrays is None:
            self._arrays = csr_arrays(self.csr)
        return self._arrays

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if self.storage == "lowrank":
            out = np.empty(self.n)
            K.lowrank_matvec(self.factor.U, self.factor.U.T @ x, out)
            return out
        indptr, indices, data = self.kernel_arrays()
        out = np.empty(self.n)
        K.csr_matvec(indptr, indices, data, np.ascontiguousarray(x, dtype=np.float64), out)
        return out

    def to_dense(self) -> np.ndarray:
        if self.storage == "dense":
            return self.Q
        if self.storage == "csr":
            return self.Q.toarray()
        return self.factor.U @ self.factor.U.T

    def value(self, x) -> float:
        return float(x @ (0.5 * self.matvec(x) - self.b))

    @property
    def shape(self):
        return (self.n,)


@dataclass(frozen=True)
class SeparableRegularizer:
    """``Omega(x) = sum_i Omega_i(x_i)`` with a closed-form proximal map.

    ``kind`` is ``"none"``, ``"l1"`` (``Omega_i = weight * |x_i|``) or
    ``"box"`` (indicator of ``[lower_i, upper_i]``).
    """

    kind: str = "none"
    weight: float = 1.0
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("none", "l1", "box"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind == "l1" and not self.weight > 0:
            raise ValueError("L1 weight must be positive")
        if self.kind == "box":
            if self.lower is None or self.upper is None:
                raise ValueError("box regularizer needs lower and upper bounds")
            lo = np.asarray(self.lower, dtype=np.float64)
            hi = np.asarray(self.upper, dtype=np.float64)
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ValueError("box bounds must satisfy lower <= upper")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def l1(cls, weight: float = 1.0):
        return cls("l1", weight=weight)

    @classmethod
    def box(cls, lower, upper):
        return cls("box", lower=lower, upper=upper)

    @property
    def code(self) -> int:
        return {"none": K.REG_NONE, "l1": K.REG_L1, "box": K.REG_BOX}[self.kind]

    def bounds(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            lo = np.broadcast_to(self.lower, (n,)).astype(np.float64)
            hi = np.broadcast_to(self.upper, (n,)).astype(np.float64)
            return lo, hi
        return np.full(n, -np.inf), np.full(n, np.inf)

    def value(self, x: np.ndarray) -> float:
        if self.kind == "l1":
            return float(self.weight * np.abs(x).sum())
        if self.kind == "box":
            lo, hi = self.bounds(x.shape[0])
            return 0.0 if np.all((x >= lo) & (x <= hi)) else math.inf
        return 0.0


class CompositeProblem:
    """``h(x) = f(x) + lam * Omega(x)`` with ``f`` quadratic and ``Omega`` separable."""

    def __init__(self, smooth: QuadraticProblem, reg: SeparableRegularizer,
                 lam: float = 1.0, known_hstar: float | None = None):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        if reg.kind == "box" and np.ndim(reg.lower) == 1 and reg.lower.shape[0] != smooth.n:
            raise ValueError("box bounds do not match the dimension")
        self.smooth = smooth
        self.reg = reg
        self.lam = float(lam)
        self.n = smooth.n
        if known_hstar is None and (self.lam == 0.0 or reg.kind == "none"):
            known_hstar = smooth.known_fstar
        self.known_hstar = None if known_hstar is None else float(known_hstar)

    @property
    def threshold_scale(self) -> float:
        """Factor multiplying the steplength inside the shrink operator."""
        w = self.reg.weight if self.reg.kind == "l1" else 1.0
        return self.lam * w

    def value(self, x) -> float:
        f = self.smooth.value(x)
        if self.lam == 0.0:
            return f
        return f + self.lam * self.reg.value(x)


class LinearSystemProblem:
    """Consistent system ``Aw = b`` whose rows have unit 2-norm.

    The optimization variable of the coordinate methods is the dual
    ``x in R^m`` of ``min 1/2 ||w||^2 s.t. Aw = b``; its objective is
    ``1/2 ||A^T x||^2 - b^T x`` and the primal iterate is ``w = A^T x``.
    """

    def __init__(self, A, b, w_true=None, row_tol: float = 1e-12):
        self.A = as_csr(A)
        check_csr(self.A)
        self.m, self.n = self.A.shape
        self.b = np.array(b, dtype=np.float64).reshape(-1)
        if self.b.shape != (self.m,):
            raise ValueError("right-hand side has the wrong length")
        norms = np.sqrt(np.asarray(self.A.multiply(self.A).sum(axis=1)).ravel())
        bad = np.flatnonzero(np.abs(norms - 1.0) > row_tol)
        if bad.size:
            raise ValueError(f"row {bad[0]} has norm {norms[bad[0]]!r}, expected 1")
        self.w_true = None if w_true is None else np.array(w_true, dtype=np.float64)
        self._dual = None
        self._arrays = None
        self._pinv = None
        self.descriptor: dict | None = None

    def kernel_arrays(self):
        if self._arrays is None:
            self._arrays = csr_arrays(self.A)
        return self._arrays

    def dual_quadratic(self) -> QuadraticProblem:
        """The dual as a quadratic in ``x`` with ``Q = A A^T`` (cached)."""
        if self._dual is None:
            AAt = (self.A @ self.A.T).tocsr()
            AAt = 0.5 * (AAt + AAt.T)
            self._dual = QuadraticProblem(AAt, self.b)
        return self._dual

    def primal(self, x: np.ndarray) -> np.ndarray:
        return self.A.T @ x

    def value(self, x) -> float:
        y = self.A.T @ x
        return float(0.5 * y @ y - self.b @ x)

    def residual(self, w: np.ndarray) -> np.ndarray:
        return self.A @ w - self.b


class PowellProblem:
    """``f(x) = -(x1 x2 + x2 x3 + x1 x3) + sum_i (|x_i| - 1)_+^2`` on ``R^3``.

    ``f(1,1,1) = f(-1,-1,-1) = -3`` are the documented reference points. The
    function is unbounded below along ``(t, t, t)``, so they are not global
    minimizers.
    """

    n = 3
    reference_points = (np.ones(3), -np.ones(3))
    reference_value = -3.0

    def value(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        cross = x[0] * x[1] + x[1] * x[2] + x[0] * x[2]
        pen = np.maximum(np.abs(x) - 1.0, 0.0)
        return float(-cross + pen @ pen)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        s = x.sum() - x
        return -s + 2.0 * np.sign(x) * np.maximum(np.abs(x) - 1.0, 0.0)

    def distance_to_reference(self, x) -> float:
        return float(min(np.linalg.norm(x - p) for p in self.reference_points))


def _dim(problem) -> int:
    return problem.m if isinstance(problem, LinearSystemProblem) else problem.n


def _check_x(problem, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != _dim(problem):
        raise ValueError(f"expected a vector of length {_dim(problem)}, got shape {x.shape}")
    return x


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def objective_value(problem, x) -> float:
    """``f``, ``h`` or the Kaczmarz dual objective at ``x``."""
    x = _check_x(problem, x)
    return problem.value(x)


def _smooth_of(problem):
    if isinstance(problem, CompositeProblem):
        return problem.smooth
    if isinstance(problem, LinearSystemProblem):
        return problem.dual_quadratic()
    return problem


def component_gradient(problem, x, i: int) -> float:
    """``[grad f(x)]_i`` (the smooth part for composite problems).

    For CSR storage the cost is proportional to the nonzeros of row ``i``.
    """
    x = _check_x(problem, x)
    n = _dim(problem)
    if not 0 <= i < n:
        raise IndexError(f"coordinate {i} out of range for dimension {n}")
    if isinstance(problem, PowellProblem):
        return float(problem.gradient(x)[i])
    q = _smooth_of(problem)
    if q.storage == "lowrank":
        U = q.factor.U
        return K.dense_dot(U[i], U.T @ x) - q.b[i]
    indptr, indices, data = q.kernel_arrays()
    return K.csr_row_dot(indptr, indices, data, x, i) - q.b[i]


def full_gradient(problem, x) -> np.ndarray:
    """Gradient whose entries equal :func:`component_gradient` exactly."""
    x = _check_x(problem, x)
    if isinstance(problem, PowellProblem):
        return problem.gradient(x)
    q = _smooth_of(problem)
    return q.matvec(x) - q.b


# --------------------------------------------------------------------------
# Lipschitz data
# --------------------------------------------------------------------------

@dataclass
class LipschitzProfile:
    """Curvature constants of a quadratic.

    ``sigma`` is the smallest eigenvalue (0 when singular or not computed);
    ``sigma_nz`` the smallest nonzero eigenvalue (``nan`` when not computed).
    ``zero_coordinates`` marks ``L_i = 0``; ``degenerate`` marks those whose
    linear term is nonzero, which makes ``f`` unbounded below.
    """

    per_coordinate: np.ndarray
    l_max: float
    l_std: float
    l_res: float
    lambda_ratio: float
    sigma: float = 0.0
    sigma_nz: float = math.nan
    sigma_computed: bool = False
    zero_coordinates: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    @property
    def n(self) -> int:
        return self.per_coordinate.shape[0]

    @property
    def has_zero(self) -> bool:
        return bool(self.zero_coordinates.any())


def power_iteration(matvec, n: int, rtol: float = 1e-10, max_iter: int = 10_000,
                    seed: SeedLike = 12345) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Stops when successive Rayleigh quotients agree to ``rtol`` relative.
    """
    v = make_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(new - lam) <= rtol * abs(new):
            return new
        lam = new
    return lam


def _spectrum(q: QuadraticProblem) -> np.ndarray | None:
    if q.storage == "lowrank":
        ev = q.factor.gram_eigh[0]
        if q.factor.rank < q.n:
            ev = np.concatenate([np.zeros(q.n - q.factor.rank), ev])
        return ev
    if q.n <= _DENSE_SPECTRUM_N:
        return np.linalg.eigvalsh(q.to_dense())
    return None


def lipschitz_profile(problem, compute_sigma: bool = True) -> LipschitzProfile:
    """Coordinate, restricted and global Lipschitz constants of a quadratic.

    ``L`` is exact for ``n <= 64`` or low-rank storage, and by power
    iteration otherwise. ``sigma`` needs the full spectrum, which is only
    formed when ``compute_sigma`` is set and the matrix is small enough (or
    low-rank).
    """
    q = _smooth_of(problem)
    if not isinstance(q, QuadraticProblem):
        raise TypeError("Lipschitz profiles are defined for quadratic problems")
    Li = q.diag.copy()
    l_max = float(Li.max())
    if q.storage == "lowrank":
        U = q.factor.U
        col2 = np.einsum("ij,ij->i", U @ q.factor.gram, U)
    elif q.storage == "csr":
        col2 = np.asarray(q.Q.multiply(q.Q).sum(axis=0)).ravel()
    else:
        col2 = np.einsum("ij,ij->j", q.Q, q.Q)
    l_res = float(np.sqrt(max(col2.max(), 0.0)))

    spec = None
    if q.n <= _SMALL_EIG_N:
        spec = np.linalg.eigvalsh(q.to_dense())
        l_std = float(spec[-1])
    elif q.storage == "lowrank":
        l_std = float(max(q.factor.gram_eigh[0][-1], 0.0))
    else:
        l_std = power_iteration(q.matvec, q.n)
    # the restricted constant never exceeds the spectral norm
    l_res = min(l_res, l_std) if l_std > 0 else l_res

    sigma, sigma_nz, computed = 0.0, math.nan, False
    if compute_sigma:
        if spec is None:
            spec = _spectrum(q)
        if spec is not None:
            computed = True
            tol = 10.0 * q.n * np.finfo(float).eps * max(abs(spec[-1]), 1e-300)
            lo = float(spec[0])
            sigma = lo if lo > tol else 0.0
            nz = spec[spec > tol]
            sigma_nz = float(nz[0]) if nz.size else 0.0
    zero = Li == 0.0
    return LipschitzProfile(
        per_coordinate=Li,
        l_max=l_max,
        l_std=l_std,
        l_res=l_res,
        lambda_ratio=l_res / l_max if l_max > 0 else math.nan,
        sigma=sigma,
        sigma_nz=sigma_nz,
        sigma_computed=computed,
        zero_coordinates=zero,
        degenerate=zero & (q.b != 0.0),
    )


def coordinate_profile(problem) -> LipschitzProfile:
    """Only the coordinate constants ``L_i`` and ``L_max`` (other fields ``nan``).

    Cheap enough to call per run; cached on the problem.
    """
    q = _smooth_of(problem)
    cached = getattr(q, "_coordinate_profile", None)
    if cached is not None:
        return cached
    Li = q.diag.copy()
    zero = Li == 0.0
    prof = LipschitzProfile(per_coordinate=Li, l_max=float(Li.max()), l_std=math.nan,
                            l_res=math.nan, lambda_ratio=math.nan,
                            zero_coordinates=zero, degenerate=zero & (q.b != 0.0))
    q._coordinate_profile = prof
    return prof


def cached_profile(problem, compute_sigma: bool = True) -> LipschitzProfile:
    """:func:`lipschitz_profile`, memoized on the problem object."""
    q = _smooth_of(problem)
    store = q.__dict__.setdefault("_full_profiles", {})
    if True in store:
        return store[True]
    if compute_sigma not in store:
        store[compute_sigma] = lipschitz_profile(q, compute_sigma=compute_sigma)
    return store[compute_sigma]


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------

def shrink(beta: float, tau: float, reg: SeparableRegularizer, i: int = 0) -> float:
    """Proximal map ``argmin_c (c - tau)^2 / (2 beta) + Omega_i(c)``.

    For the L1 kind the threshold is ``beta * reg.weight``.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if reg.kind == "l1":
        return K.shrink_scalar(K.REG_L1, beta * reg.weight, float(tau), 0.0, 0.0)
    if reg.kind == "box":
        lo = float(reg.lower[i]) if np.ndim(reg.lower) else float(reg.lower)
        hi = float(reg.upper[i]) if np.ndim(reg.upper) else float(reg.upper)
        return K.shrink_scalar(K.REG_BOX, beta, float(tau), lo, hi)
    return float(tau)


def shrink_vector(beta, tau, reg: SeparableRegularizer) -> np.ndarray:
    """Elementwise :func:`shrink` with per-coordinate ``beta``."""
    tau = np.asarray(tau, dtype=np.float64)
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), tau.shape)
    if np.any(beta < 0):
        raise ValueError("beta must be nonnegative")
    if reg.kind == "l1":
        thr = beta * reg.weight
        return np.sign(tau) * np.maximum(np.abs(tau) - thr, 0.0)
    if reg.kind == "box":
        lo, hi = reg.bounds(tau.shape[0])
        return np.clip(tau, lo, hi)
    return tau.copy()


def powell_coordinate_min(x, i: int) -> float:
    """Exact minimizer of Powell's function over coordinate ``i``.

    With ``s`` the sum of the other two coordinates the minimizer is
    ``sign(s) * (1 + |s|/2)``. At ``s = 0`` every point of ``[-1, 1]`` is
    optimal and 0 is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (3,):
        raise ValueError("Powell's function is three-dimensional")
    s = float(x.sum() - x[i])
    if s == 0.0:
        return 0.0
    return math.copysign(1.0 + abs(s) / 2.0, s)


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------

def synthetic_spectrum(r: int, cond_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Log-uniform diagonal in ``[1/cond, 1]`` with both ends attained."""
    u = rng.uniform(0.0, 1.0, size=r)
    s = np.exp(u * math.log(cond_sigma)) / cond_sigma
    s[0] = 1.0
    if r >= 2:
        s[-1] = 1.0 / cond_sigma
    return s


def generate_synthetic(n: int, r: int, cond_sigma: float, eta: float, zeta: float,
                       seed: SeedLike = 0, storage: str = "dense") -> QuadraticProblem:
    """Random PSD quadratic ``Q = V_eta S V_eta^T + zeta 11^T`` scaled to max diagonal 1.

    ``V_eta = eta V + (1 - eta) E_r`` blends a Haar-random orthonormal ``V``
    with the first ``r`` identity columns ``E_r``. The linear term is zero, so
    ``x* = 0`` and ``f* = 0``. ``storage="lowrank"`` keeps ``Q`` as a factor,
    which is how instances with ``n`` in the tens of thousands stay in memory.
    """
    if not 1 <= r <= n:
        raise ValueError("need 1 <= r <= n")
    if not cond_sigma >= 1:
        raise ValueError("cond_sigma must be >= 1")
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")
    if zeta < 0:
        raise ValueError("zeta must be nonnegative")
    if storage not in ("dense", "lowrank"):
        raise ValueError(f"unknown storage {storage!r}")
    rng = make_rng(seed)
    G = rng.standard_normal((n, r))
    V, R = np.linalg.qr(G)
    V *= np.where(np.diag(R) < 0, -1.0, 1.0)
    s = synthetic_spectrum(r, cond_sigma, rng)
    Veta = eta * V
    Veta[np.arange(r), np.arange(r)] += 1.0 - eta
    if storage == "dense":
        Q = (Veta * s) @ Veta.T
        if zeta:
            Q += zeta
        Q = 0.5 * (Q + Q.T)
        Q /= np.diag(Q).max()
        prob = QuadraticProblem(Q, np.zeros(n), known_fstar=0.0, known_xstar=np.zeros(n))
    else:
        cols = [Veta * np.sqrt(s)]
        if zeta:
            cols.append(np.full((n, 1), math.sqrt(zeta)))
        U = np.hstack(cols) if len(cols) > 1 else cols[0]
        U *= 1.0 / math.sqrt(np.einsum("ij,ij->i", U, U).max())
        prob = QuadraticProblem(LowRankFactor(U), np.zeros(n),
                                known_fstar=0.0, known_xstar=np.zeros(n))
    prob.descriptor = {"kind": "synthetic", "n": n, "r": r, "cond": cond_sigma,
                       "eta": eta, "zeta": zeta, "seed": seed, "storage": storage}
    return prob


def generate_linear_system(m: int, n: int, density: float, seed: SeedLike = 0,
                           rank: int | None = None) -> LinearSystemProblem:
    """Consistent system with unit-norm rows and ``b = A w_true``.

    Rows hold ``max(1, round(density * n))`` standard-normal entries at
    uniformly chosen columns. With ``rank`` set, ``A`` is instead the
    row-normalized product of ``m x rank`` and ``rank x n`` Gaussian factors,
    so ``A A^T`` is singular whenever ``rank < m``.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    rng = make_rng(seed)
    if rank is not None:
        if not 1 <= rank <= min(m, n):
            raise ValueError("rank must lie in [1, min(m, n)]")
        for _ in range(100):
            D = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
            norms = np.linalg.norm(D, axis=1)
            if np.all(norms > 0):
                break
        else:
            raise RuntimeError("could not draw a matrix without zero rows")
        A = sp.csr_matrix(D / norms[:, None])
    else:
        k = max(1, int(round(density * n)))
        indptr = np.arange(0, (m + 1) * k, k, dtype=np.int64)
        indices = np.empty(m * k, dtype=np.int64)
        data = np.empty(m * k)
        for i in range(m):
            for _ in range(100):
                cols = np.sort(rng.choice(n, size=k, replace=False))
                vals = rng.standard_normal(k)
                nrm = np.linalg.norm(vals)
                if nrm > 0:
                    break
            else:
                raise RuntimeError(f"row {i} stayed zero after 100 resamples")
            indices[i * k:(i + 1) * k] = cols
            data[i * k:(i + 1) * k] = vals / nrm
        A = sp.csr_matrix((data, indices, indptr), shape=(m, n))
    w_true = rng.standard_normal(n)
    system = LinearSystemProblem(A, A @ w_true, w_true=w_true)
    system.descriptor = {"kind": "linear_system", "m": m, "n": n, "density": density,
                         "seed": seed, "rank": rank}
    return system


def generate_sparse_quadratic(n: int, nnz_per_row: int, seed: SeedLike = 0,
                              margin: float = 0.25) -> QuadraticProblem:
    """Sparse strictly diagonally dominant quadratic with a known minimizer.

    Off-diagonal entries are uniform on ``[-1, 1]`` at random symmetric
    positions. Each diagonal entry is its row's off-diagonal absolute sum
    plus ``margin`` times the largest such sum, and the matrix is scaled to
    max diagonal 1. Then ``lambda_min >= margin / (1 + margin)`` and
    ``||I - Q||_inf <= 1 / (1 + margin)``. The linear term is ``Q x_true``
    for a standard-normal ``x_true``.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if not margin > 0:
        raise ValueError("margin must be positive")
    rng = make_rng(seed)
    half = max(1, (n * nnz_per_row) // 2)
    rows = rng.integers(0, n, size=half)
    cols = rng.integers(0, n, size=half)
    keep = rows != cols
    vals = rng.uniform(-1.0, 1.0, size=half)[keep]
    T = sp.coo_matrix((vals, (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    S = (T + T.T).tocsr()
    off = np.asarray(abs(S).sum(axis=1)).ravel()
    d = off + margin * max(off.max(), 1.0)
    Q = (S + sp.diags(d)).tocsr()
    Q = Q * (1.0 / d.max())
    Q = as_csr(0.5 * (Q + Q.T))
    x_true = rng.standard_normal(n)
    b = Q @ x_true
    prob = QuadraticProblem(Q, b)
    prob.known_xstar = x_true
    prob.known_fstar = float(-0.5 * b @ x_true)
    prob.descriptor = {"kind": "sparse", "n": n, "nnz_per_row": nnz_per_row,
                       "seed": seed, "margin": margin}
    return prob
