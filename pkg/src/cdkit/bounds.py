"""Convergence-bound envelopes and their empirical verification.

An envelope is the theoretical upper bound on the (expected) optimality gap
over a grid of iteration counts. :func:`verify_envelope` compares the mean gap
of a set of traces against ``slack`` times the envelope.

Where a bound needs the initial distance constant ``R_0^2`` it is replaced by
``2 (f(x0) - f*) / sigma``, which dominates it for strongly convex problems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problems import (CompositeProblem, LinearSystemProblem, QuadraticProblem,
                       cached_profile)

SUBLINEAR = {"T1-sublinear", "T2-accel", "T3-cyclic", "T6-sublinear", "FG-baseline"}
LINEAR = {"T1-linear", "T2-accel-linear", "T3-cyclic-linear", "T4-prox-linear",
          "RK-linear", "T6-linear"}
THEOREM_IDS = tuple(sorted(SUBLINEAR | LINEAR))
DETERMINISTIC = {"T3-cyclic", "T3-cyclic-linear", "FG-baseline"}
_ALIASES = {"T2-accel-sublinear": "T2-accel", "T3-cyclic-sublinear": "T3-cyclic"}


class EnvelopeError(ValueError):
    pass


@dataclass
class BoundEnvelope:
    theorem_id: str
    k: np.ndarray
    values: np.ndarray
    params: dict = field(default_factory=dict)
    check: np.ndarray | None = None

    @property
    def expectation(self) -> bool:
        return self.theorem_id not in DETERMINISTIC

    @property
    def k_min(self) -> int:
        return 1 if self.theorem_id in SUBLINEAR else 0

    def checked(self) -> np.ndarray:
        mask = self.k >= self.k_min
        if self.check is not None:
            mask &= self.check
        return mask


def _gap0(problem, x0, fstar):
    return float(problem.value(np.asarray(x0, dtype=np.float64)) - fstar)


def _need_sigma(sigma, tid):
    if not sigma > 0:
        raise EnvelopeError(f"{tid} needs sigma > 0; this instance has sigma = {sigma!r}")


def _reference(problem):
    from .reference import reference_optimum
    if isinstance(problem, CompositeProblem):
        if problem.known_hstar is None:
            reference_optimum(problem)
        return problem.known_hstar, getattr(problem, "reference_x", None)
    if problem.known_fstar is None or problem.known_xstar is None:
        reference_optimum(problem)
    return problem.known_fstar, problem.known_xstar


def bound_envelope(theorem_id: str, problem, x0, k_values, *, sigma: float | None = None,
                   fstar: float | None = None) -> BoundEnvelope:
    """Evaluate the bound named ``theorem_id`` at each ``k`` in ``k_values``.

    ``problem`` is a quadratic (composite for ``T4-prox-linear``, linear system
    for ``RK-linear``). ``sigma`` overrides the modulus from the Lipschitz
    profile; for the ``T6`` bounds the default is the smallest nonzero
    eigenvalue, which is the optimal-strong-convexity modulus of a quadratic.
    Sublinear bounds are ``+inf`` at ``k = 0``. The cyclic bounds are stated
    for multiples of ``n`` only; elsewhere they are evaluated at the last
    multiple reached (``f(x0) - f*`` before the first one), and only the
    multiples are marked for checking.

    Raises
    ------
    EnvelopeError
        If the bound needs ``sigma > 0`` and the instance has none, or if the
        reference optimum cannot be determined.
    """
    tid = _ALIASES.get(theorem_id, theorem_id)
    if tid not in THEOREM_IDS:
        raise EnvelopeError(f"unknown theorem id {theorem_id!r}")
    k = np.asarray(k_values, dtype=np.int64)
    if np.any(k < 0):
        raise EnvelopeError("k values must be nonnegative")
    kf = k.astype(np.float64)
    x0 = np.asarray(x0, dtype=np.float64)

    if tid == "RK-linear":
        if not isinstance(problem, LinearSystemProblem):
            raise EnvelopeError("RK-linear needs a LinearSystemProblem")
        from .kaczmarz import distance_sq, lambda_min_nz
        lam = lambda_min_nz(problem)
        m = problem.m
        d0 = distance_sq(problem, x0)
        rate = max(1.0 - lam / m, 0.0)
        vals = d0 * rate ** kf
        return BoundEnvelope(tid, k, vals, dict(m=m, lambda_min_nz=lam, dist0=d0, rate=rate))

    if tid == "T4-prox-linear":
        if not isinstance(problem, CompositeProblem):
            raise EnvelopeError("T4-prox-linear needs a CompositeProblem")
        quad = problem.smooth
    else:
        if not isinstance(problem, QuadraticProblem):
            raise EnvelopeError(f"{tid} needs a QuadraticProblem")
        quad = problem
    prof = cached_profile(quad, compute_sigma=True)
    n = quad.n
    lmax, L = prof.l_max, prof.l_std
    if fstar is None:
        fstar, xstar = _reference(problem)
    else:
        xstar = getattr(problem, "known_xstar", None)
    gap0 = _gap0(problem, x0, fstar)
    params = dict(n=n, l_max=lmax, l_std=L, gap0=gap0, fstar=fstar)

    if tid in ("T6-sublinear", "T6-linear"):
        from .reference import solution_set_projection
        px = solution_set_projection(quad, x0)
        c0 = lmax * float(np.sum((x0 - px) ** 2)) + gap0
        params.update(c0=c0)
        if tid == "T6-sublinear":
            vals = n * c0 / (n + kf)
        else:
            s = sigma if sigma is not None else (prof.sigma if prof.sigma > 0 else prof.sigma_nz)
            _need_sigma(s, tid)
            rate = 1.0 - s / (n * (s + 2.0 * lmax))
            params.update(sigma=s, rate=rate)
            vals = c0 * rate ** kf
        return BoundEnvelope(tid, k, vals, params)

    s = prof.sigma if sigma is None else float(sigma)
    params["sigma"] = s

    if tid == "T1-linear" or tid == "T4-prox-linear":
        _need_sigma(s, tid)
        rate = max(1.0 - s / (n * lmax), 0.0)
        params["rate"] = rate
        vals = gap0 * rate ** kf
        return BoundEnvelope(tid, k, vals, params)

    if tid == "T2-accel-linear" or tid == "T2-accel":
        if xstar is None:
            raise EnvelopeError("T2 bounds need the minimizer")
        S0 = lmax * float(np.sum((x0 - xstar) ** 2)) + gap0 / n ** 2
        params["S0"] = S0
        if tid == "T2-accel":
            vals = S0 * (n / (kf + 1.0)) ** 2
        else:
            _need_sigma(s, tid)
            q = math.sqrt(s / lmax) / (2.0 * n)
            with np.errstate(over="ignore"):
                br = (1.0 + q) ** (kf + 1.0) - (1.0 - q) ** (kf + 1.0)
            vals = S0 * (s / lmax) / br ** 2
        return BoundEnvelope(tid, k, vals, params)

    if tid == "T3-cyclic-linear":
        _need_sigma(s, tid)
        kappa = 1.0 + n * L ** 2 / lmax ** 2
        rate = 1.0 - s / (2.0 * lmax * kappa)
        cycles = np.floor_divide(k, n).astype(np.float64)
        vals = gap0 * rate ** cycles
        params.update(rate_per_cycle=rate)
        return BoundEnvelope(tid, k, vals, params, check=(k % n == 0) & (k > 0))

    # remaining bounds use the surrogate R0^2 = 2 gap0 / sigma
    _need_sigma(s, tid)
    R0sq = 2.0 * gap0 / s
    params["R0_sq"] = R0sq
    with np.errstate(divide="ignore"):
        if tid == "T1-sublinear":
            vals = np.where(k > 0, 2.0 * n * lmax * R0sq / np.maximum(kf, 1.0), math.inf)
        elif tid == "FG-baseline":
            vals = np.where(k > 0, 2.0 * L * R0sq / np.maximum(kf, 1.0), math.inf)
        else:  # T3-cyclic
            kappa = 1.0 + n * L ** 2 / lmax ** 2
            kk = (np.floor_divide(k, n) * n).astype(np.float64)
            vals = np.where(kk > 0, 4.0 * n * lmax * kappa * R0sq / (kk + 8.0), gap0)
            return BoundEnvelope(tid, k, vals, params, check=(k % n == 0) & (k > 0))
    return BoundEnvelope(tid, k, vals, params)


@dataclass
class VerificationReport:
    theorem_id: str
    passed: bool
    slack: float
    n_traces: int
    worst_ratio: float
    worst_k: int
    checked: int
    message: str = ""
    mean_gap: np.ndarray | None = None
    bound: np.ndarray | None = None

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.theorem_id}: worst mean/bound = {self.worst_ratio:.4g} at k="
                f"{self.worst_k} (slack {self.slack}, {self.n_traces} traces, "
                f"{self.checked} checkpoints){' - ' + self.message if self.message else ''}")


def mean_gap(traces) -> tuple[np.ndarray, np.ndarray]:
    """Common checkpoint grid and the mean gap across traces."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces given")
    ks = traces[0].ks
    for t in traces[1:]:
        if not np.array_equal(t.ks, ks):
            raise ValueError("traces have mismatched checkpoints")
    G = np.vstack([t.gaps for t in traces])
    return ks, G.mean(axis=0)


def verify_envelope(traces, envelope: BoundEnvelope, slack: float = 1.1, *,
                    min_traces: int | None = None) -> VerificationReport:
    """PASS iff the mean gap is at most ``slack * bound`` at every checked checkpoint.

    Expectation bounds require at least ``min_traces`` traces (100 by default);
    deterministic bounds accept one. A trace with a non-finite gap fails the
    check outright.

    Raises
    ------
    ValueError
        If the traces' checkpoints differ from each other or from the envelope.
    """
    traces = list(traces)
    if min_traces is None:
        min_traces = 100 if envelope.expectation else 1
    if len(traces) < min_traces:
        raise ValueError(f"{envelope.theorem_id} needs at least {min_traces} traces, "
                         f"got {len(traces)}")
    ks, mg = mean_gap(traces)
    if not np.array_equal(ks, envelope.k):
        raise ValueError("trace checkpoints do not match the envelope's k values")
    tid = envelope.theorem_id
    bad = [i for i, t in enumerate(traces) if not np.all(np.isfinite(t.gaps))]
    if bad:
        return VerificationReport(tid, False, slack, len(traces), math.inf, -1, 0,
                                  f"trace {bad[0]} (seed {traces[bad[0]].seed}) has a "
                                  f"non-finite gap", mg, envelope.values)
    mask = envelope.checked()
    bound = envelope.values
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, mg / bound, np.where(mg > 0, math.inf, 0.0))
    ratio = np.where(mask, ratio, -math.inf)
    if not mask.any():
        return VerificationReport(tid, False, slack, len(traces), math.nan, -1, 0,
                                  "no checkpoint is eligible for checking", mg, bound)
    j = int(np.argmax(ratio))
    worst = float(ratio[j])
    passed = bool(np.all(mg[mask] <= slack * bound[mask]))
    return VerificationReport(tid, passed, slack, len(traces), worst, int(ks[j]),
                              int(mask.sum()), "", mg, bound)
