"""Asynchronous coordinate descent.

Two executions of the same method are provided:

* :func:`simulate_async_cd` replays the method on one thread under a chosen
  delay policy. The stale point ``x_hat^k`` is the current iterate minus a
  subset ``K(k)`` of the last ``tau`` one-coordinate updates.
* :func:`run_async_threads` runs real workers on a shared vector with
  per-component atomic reads and adds and no locks.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .problems import QuadraticProblem, coordinate_profile
from .rng import SeedLike, make_rng, seed_sequence
from .schedules import UniformIID
from .serial import divergence_limit
from .trace import ConvergenceTrace, DivergenceError, Stopwatch, checkpoint_plan

_POLICY_CODES = {"none": K.POLICY_NONE, "fixed_age": K.POLICY_WORST,
                 "worst": K.POLICY_WORST, "random": K.POLICY_RANDOM}


@dataclass(frozen=True)
class DelaySchedule:
    """Which of the last ``tau`` updates the stale read misses.

    ``none``: ``x_hat = x``. ``fixed_age``: ``x_hat^k = x^{max(0, k-tau)}``.
    ``worst``: all of the last ``tau`` updates are missed. ``fixed_age`` and
    ``worst`` produce the same stale point. ``random``: each of the last
    ``tau`` updates is missed independently with probability ``p``.
    """

    policy: str = "none"
    tau: int = 0
    p: float = 0.5
    seed: SeedLike = 0

    def __post_init__(self):
        if self.policy not in _POLICY_CODES:
            raise ValueError(f"unknown delay policy {self.policy!r}")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.policy == "none" and self.tau:
            object.__setattr__(self, "tau", 0)
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    @classmethod
    def no_delay(cls):
        return cls("none", 0)

    @classmethod
    def fixed_age(cls, tau: int):
        return cls("fixed_age", tau)

    @classmethod
    def worst_case(cls, tau: int):
        return cls("worst", tau)

    @classmethod
    def random_subset(cls, tau: int, seed: SeedLike = 0, p: float = 0.5):
        return cls("random", tau, p, seed)

    @property
    def code(self) -> int:
        return _POLICY_CODES[self.policy]

    @property
    def label(self) -> str:
        return "noDelay" if self.policy == "none" else {
            "fixed_age": "fixedAge", "worst": "worst", "random": "random"}[self.policy] + f":{self.tau}"

    def missed(self, k: int, rng: np.random.Generator | None = None) -> list[int]:
        """The set ``K(k)`` of update indices missed at iteration ``k``."""
        window = list(range(k - 1, max(k - self.tau, 0) - 1, -1))
        if self.policy in ("none",):
            return []
        if self.policy == "random":
            if rng is None:
                raise ValueError("random policy needs a generator")
            keep = rng.random(self.tau) < self.p
            return [l for q, l in enumerate(window) if keep[q]]
        return window


def parse_policy(text: str, seed: SeedLike = 0) -> DelaySchedule | None:
    """``noDelay | fixedAge:tau | random:tau | worst:tau``; ``real`` gives ``None``."""
    key, _, arg = text.strip().partition(":")
    key = key.lower()
    if key == "real":
        return None
    if key == "nodelay":
        return DelaySchedule.no_delay()
    if not arg:
        raise ValueError(f"policy {key!r} needs a delay, e.g. {key}:2")
    tau = int(arg)
    if key == "fixedage":
        return DelaySchedule.fixed_age(tau)
    if key == "worst":
        return DelaySchedule.worst_case(tau)
    if key == "random":
        return DelaySchedule.random_subset(tau, seed)
    raise ValueError(f"unknown policy {text!r}")


@dataclass(frozen=True)
class AsyncConfig:
    threads: int = 1
    gamma_fraction: float = 0.5
    budget: int = 10_000
    checkpoint_stride: int = 1_000
    seed: SeedLike = 0
    target_gap: float | None = None

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("need at least one thread")
        if not 0 < self.gamma_fraction <= 1:
            raise ValueError("gamma_fraction must lie in (0, 1]")


def max_delay_bound(n: int, lam: float) -> int:
    """Largest ``tau >= 0`` with ``4 e lam (tau+1)^2 <= sqrt(n)``, or -1 if none."""
    if n < 1 or lam < 1:
        raise ValueError("need n >= 1 and lam >= 1")
    rhs = math.sqrt(n)
    c = 4.0 * math.e * lam
    if c > rhs:
        return -1
    t = int(math.floor(math.sqrt(rhs / c))) - 1
    while t >= 0 and c * (t + 1) ** 2 > rhs:
        t -= 1
    while c * (t + 2) ** 2 <= rhs:
        t += 1
    return t


def linf_contraction_factor(Q, alpha) -> float:
    """``||I - alpha Q||_inf`` (max absolute row sum); ``alpha`` scalar or per-row."""
    if isinstance(Q, QuadraticProblem):
        if Q.storage == "lowrank":
            Q = Q.to_dense()
        else:
            Q = Q.Q
    if sp.issparse(Q):
        M = sp.csr_matrix(Q, dtype=np.float64)
        n = M.shape[0]
        a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (n,))
        T = sp.identity(n, format="csr") - sp.diags(a) @ M
        return float(np.asarray(abs(T).sum(axis=1)).max())
    M = np.asarray(Q, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("Q must be square")
    a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (M.shape[0],))
    T = np.eye(M.shape[0]) - a[:, None] * M
    return float(np.abs(T).sum(axis=1).max())


def _epoch_ratio(epoch_sq, done, epoch_len) -> float:
    full = done // epoch_len
    if full < 2:
        return math.nan
    prev, last = epoch_sq[full - 2], epoch_sq[full - 1]
    return prev / last if last > 0 else math.nan


def simulate_async_cd(problem: QuadraticProblem, delay: DelaySchedule, gamma: float,
                      budget: int, checkpoint_stride: int, seed: SeedLike = 0, *,
                      x0=None, step: float | None = None, epoch_len: int | None = None,
                      keep_iterates: bool = False, label: str | None = None) -> ConvergenceTrace:
    """Deterministic single-thread replay of asynchronous CD.

    Each iteration samples ``i`` uniformly, forms ``[grad f(x_hat)]_i`` where
    ``x_hat`` omits the updates in ``K(k)``, and applies
    ``x_i <- x_i - alpha * g`` with ``alpha = gamma / L_max`` (or ``step``).

    The ``rho_diag`` column is the ratio of mean squared update size over the
    last two complete epochs (older over newer); it is recorded, never
    enforced. ``trace.info["max_staleness"]`` is the largest observed
    ``||x_hat - x||_0``.
    """
    if not isinstance(problem, QuadraticProblem):
        raise TypeError("simulate_async_cd needs a QuadraticProblem")
    n = problem.n
    tau = delay.tau
    if tau >= max(budget, 1):
        raise ValueError("tau must be smaller than the budget")
    prof = coordinate_profile(problem)
    alpha = float(step) if step is not None else gamma / prof.l_max
    if not alpha > 0:
        raise ValueError("steplength must be positive")
    epoch_len = int(epoch_len or n)
    x = (make_rng(seed, 5).standard_normal(n) if x0 is None
         else np.array(x0, dtype=np.float64))
    if x.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    lowrank = problem.storage == "lowrank"
    if lowrank:
        U = problem.factor.U
        state = U.T @ x
    else:
        indptr, indices, data = problem.kernel_arrays()
        state = problem.matvec(x) - problem.b
    fstar = math.nan if problem.known_fstar is None else problem.known_fstar
    f = problem.value(x)
    limit = divergence_limit(f, fstar)

    width = max(tau, 1)
    ring_i = np.zeros(width, dtype=np.int64)
    ring_d = np.zeros(width)
    epoch_sq = np.zeros(budget // epoch_len + 2)
    stale = np.zeros(1, dtype=np.int64)
    schedule = UniformIID(n, seed)
    mask_rng = make_rng(delay.seed if delay.policy == "random" else seed, 3)
    no_mask = np.zeros((1, 1), dtype=np.bool_)

    label = label or f"async-sim/{delay.label}"
    trace = ConvergenceTrace(label=label, seed=seed)
    trace.snapshots = [] if keep_iterates else None
    trace.record(0, f, f - fstar, 0, 0, rho_diag=math.nan, policy=delay.label, threads=1)
    if keep_iterates:
        trace.snapshots.append(x.copy())
    clock = Stopwatch()
    flops = done = 0
    for k_next in checkpoint_plan(budget, checkpoint_stride)[1:]:
        count = k_next - done
        idx = schedule.take(count)
        mask = (mask_rng.random((count, width)) < delay.p if delay.policy == "random"
                else no_mask)
        with clock:
            if lowrank:
                it, f, fl, status = K.async_sim_lowrank(
                    U, problem.diag, problem.b, x, state, idx, alpha, tau, delay.code, mask,
                    ring_i, ring_d, done, f, limit, epoch_len, epoch_sq, stale)
            else:
                it, f, fl, status = K.async_sim_csr(
                    indptr, indices, data, problem.diag, problem.b, x, state, idx, alpha, tau,
                    delay.code, mask, ring_i, ring_d, done, f, limit, epoch_len, epoch_sq, stale)
        done += it
        flops += fl
        obj = problem.value(x)
        trace.record(done, obj, obj - fstar, clock.total, flops,
                     rho_diag=_epoch_ratio(epoch_sq, done, epoch_len),
                     policy=delay.label, threads=1)
        if keep_iterates:
            trace.snapshots.append(x.copy())
        if status == K.STATUS_DIVERGED or not abs(obj) <= limit:
            trace.final_x = x
            trace.stopped = "diverged"
            trace.info["iterations"] = done
            raise DivergenceError(f"{label}: objective {obj!r} left the admissible range", trace)
    trace.final_x = x
    trace.info.update(iterations=done, max_staleness=int(stale[0]), alpha=alpha,
                      epoch_sq=epoch_sq[: done // epoch_len].copy())
    return trace


def run_async_threads(problem: QuadraticProblem, config: AsyncConfig, x0=None, *,
                      label: str | None = None) -> ConvergenceTrace:
    """Lock-free asynchronous CD with ``config.threads`` workers on a shared ``x``.

    A global atomic counter numbers the updates. Checkpoints are barriers:
    every ``checkpoint_stride`` updates the workers finish, the objective is
    evaluated, and fresh workers resume. Wall time covers worker segments only.
    Staleness per update is measured as the number of other updates that
    landed between claiming the update and writing it. With one thread the
    run is deterministic for a fixed seed.
    """
    if not isinstance(problem, QuadraticProblem) or problem.storage == "lowrank":
        raise TypeError("run_async_threads needs a dense or CSR QuadraticProblem")
    n = problem.n
    P = config.threads
    prof = coordinate_profile(problem)
    alpha = config.gamma_fraction / prof.l_max
    x = (make_rng(config.seed, 5).standard_normal(n) if x0 is None
         else np.array(x0, dtype=np.float64))
    if x.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    indptr, indices, data = problem.kernel_arrays()
    fstar = math.nan if problem.known_fstar is None else problem.known_fstar
    f0 = problem.value(x)
    limit = divergence_limit(f0, fstar)
    base = seed_sequence(config.seed)
    schedules = [UniformIID(n, seed_sequence(base, 6, p)) for p in range(P)]
    counter = np.zeros(1, dtype=np.int64)
    stats = np.zeros((P, 4), dtype=np.int64)

    label = label or f"async-threads/P{P}"
    trace = ConvergenceTrace(label=label, seed=config.seed)
    trace.record(0, f0, f0 - fstar, 0, 0, rho_diag=math.nan, policy="real", threads=P)
    clock = Stopwatch()
    totals = np.zeros(4, dtype=np.int64)
    errors: list[BaseException] = []
    done = 0
    for k_next in checkpoint_plan(config.budget, config.checkpoint_stride)[1:]:
        count = k_next - done
        streams = [s.take(count) for s in schedules]
        counter[0] = done

        def work(p):
            try:
                K.async_worker(indptr, indices, data, problem.b, x, alpha, streams[p],
                               counter, k_next, stats[p])
            except BaseException as exc:  # surfaced after join
                errors.append(exc)

        with clock:
            if P == 1:
                work(0)
            else:
                pool = [threading.Thread(target=work, args=(p,)) for p in range(P)]
                for t in pool:
                    t.start()
                for t in pool:
                    t.join()
        if errors:
            raise RuntimeError(f"{label}: worker failed") from errors[0]
        totals[0] += stats[:, 0].sum()
        totals[1] += stats[:, 1].sum()
        totals[2] = max(totals[2], stats[:, 2].max())
        totals[3] += stats[:, 3].sum()
        done = int(counter[0])
        f = problem.value(x)
        trace.record(done, f, f - fstar, clock.total, int(totals[3]), rho_diag=math.nan,
                     policy="real", threads=P)
        if not abs(f) <= limit:
            trace.final_x = x
            trace.stopped = "diverged"
            trace.info["iterations"] = done
            raise DivergenceError(f"{label}: objective {f!r} left the admissible range", trace)
        if config.target_gap is not None and f - fstar <= config.target_gap:
            trace.stopped = "target"
            break
    trace.final_x = x
    trace.info.update(iterations=done, threads=P, alpha=alpha,
                      mean_staleness=float(totals[1]) / max(int(totals[0]), 1),
                      max_staleness=int(totals[2]), wall_ns=clock.total)
    return trace
