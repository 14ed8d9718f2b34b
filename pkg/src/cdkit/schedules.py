"""Index-selection rules and steplength rules.

Schedules hand out 0-based coordinate indices in blocks via :meth:`take`;
drawing ``a`` and then ``b`` indices yields the same sequence as drawing
``a + b`` at once, so results never depend on checkpoint spacing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .rng import SeedLike, make_rng


class InfeasibleWindowError(ValueError):
    """A window of ``T + 1`` iterations cannot cover ``n`` indices when ``T < n - 1``."""


class EssentiallyCyclicViolation(RuntimeError):
    pass


class IndexSchedule:
    """Base class. Subclasses implement :meth:`_draw`."""

    name = "schedule"

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n must be positive")
        self.n = int(n)
        self.k = 0

    def take(self, count: int) -> np.ndarray:
        """Return the next ``count`` indices as an int64 array."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        out = self._draw(int(count))
        self.k += int(count)
        return out

    def next_index(self) -> int:
        return int(self.take(1)[0])

    def _draw(self, count: int) -> np.ndarray:
        raise NotImplementedError


class Cyclic(IndexSchedule):
    name = "cyclic"

    def _draw(self, count):
        return (self.k + np.arange(count, dtype=np.int64)) % self.n


class UniformIID(IndexSchedule):
    """Independent uniform draws from ``{0, ..., n-1}``."""

    name = "iid"

    def __init__(self, n: int, seed: SeedLike = 0):
        super().__init__(n)
        self.seed = seed
        self._rng = make_rng(seed, 1)

    def _draw(self, count):
        return self._rng.integers(0, self.n, size=count, dtype=np.int64)


class EpochShuffle(IndexSchedule):
    """A fresh uniformly random permutation every ``n`` iterations."""

    name = "epochs"

    def __init__(self, n: int, seed: SeedLike = 0):
        super().__init__(n)
        self.seed = seed
        self._rng = make_rng(seed, 2)
        self._perm = np.empty(0, dtype=np.int64)
        self._pos = 0

    def _draw(self, count):
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            if self._pos == self._perm.shape[0]:
                self._perm = self._rng.permutation(self.n).astype(np.int64)
                self._pos = 0
            c = min(count - filled, self.n - self._pos)
            out[filled:filled + c] = self._perm[self._pos:self._pos + c]
            self._pos += c
            filled += c
        return out


@njit(cache=True)
def _first_violation(last_seen, idx, k0, T):
    """First iteration at which some index was absent from the trailing ``T+1``
    window, or -1. ``last_seen`` is updated in place (-1 means never seen)."""
    for t in range(idx.shape[0]):
        k = k0 + t
        i = idx[t]
        if k - last_seen[i] >= T + 2:
            return last_seen[i] + T + 1
        last_seen[i] = k
    k_end = k0 + idx.shape[0] - 1
    worst = -1
    for j in range(last_seen.shape[0]):
        if k_end - last_seen[j] >= T + 1:
            bad = last_seen[j] + T + 1
            if worst < 0 or bad < worst:
                worst = bad
    return worst


class EssentiallyCyclic(IndexSchedule):
    """Wraps a user pattern and rejects it as soon as the window rule fails.

    The rule: for every ``k >= T`` the indices emitted at ``k-T, ..., k`` cover
    all of ``{0, ..., n-1}``. ``source`` is either another schedule or a finite
    pattern that is repeated periodically.
    """

    name = "essentially_cyclic"

    def __init__(self, n: int, T: int, source):
        super().__init__(n)
        if T < n - 1:
            raise InfeasibleWindowError(f"T={T} < n-1={n - 1}")
        self.T = int(T)
        if isinstance(source, IndexSchedule):
            if source.n != n:
                raise ValueError("source schedule has a different dimension")
            self._source = source
            self._pattern = None
        else:
            pat = np.asarray(source, dtype=np.int64)
            if pat.ndim != 1 or pat.size == 0 or pat.min() < 0 or pat.max() >= n:
                raise ValueError("pattern must be a nonempty sequence of indices in range")
            self._source = None
            self._pattern = pat
        self._last = np.full(n, -1, dtype=np.int64)

    def _draw(self, count):
        if self._source is not None:
            out = self._source.take(count)
        else:
            p = self._pattern
            out = p[(self.k + np.arange(count, dtype=np.int64)) % p.shape[0]]
        if count and self.k + count - 1 >= self.T:
            bad = _first_violation(self._last, out, self.k, self.T)
            if bad >= self.T:
                raise EssentiallyCyclicViolation(
                    f"window ending at iteration {bad} misses an index (T={self.T})")
        elif count:
            _first_violation(self._last, out, self.k, self.T)
        return out


def essentially_cyclic_check(history, T: int, n: int | None = None) -> bool:
    """True iff every window ``history[k-T : k+1]`` with ``k >= T`` covers all ``n`` indices."""
    h = np.asarray(history, dtype=np.int64)
    if n is None:
        n = int(h.max()) + 1
    if T < n - 1:
        raise InfeasibleWindowError(f"T={T} < n-1={n - 1}: no history can satisfy the rule")
    if h.shape[0] < T + 1:
        raise ValueError("history must contain at least T+1 entries")
    if h.min() < 0 or h.max() >= n:
        raise ValueError("history contains an index outside [0, n)")
    bad = _first_violation(np.full(n, -1, dtype=np.int64), h, 0, int(T))
    return not bad >= T


def make_schedule(name: str, n: int, seed: SeedLike = 0) -> IndexSchedule:
    """``"cyclic"``, ``"iid"`` or ``"epochs"``."""
    key = name.strip().lower()
    if key == "cyclic":
        return Cyclic(n)
    if key == "iid":
        return UniformIID(n, seed)
    if key == "epochs":
        return EpochShuffle(n, seed)
    raise ValueError(f"unknown schedule {name!r}")


# --------------------------------------------------------------------------
# steplengths
# --------------------------------------------------------------------------

_STEP_KINDS = ("fixed_lmax", "per_coord", "exact", "sor", "fraction")


@dataclass(frozen=True)
class StepRule:
    """``kind`` in ``fixed_lmax | per_coord | exact | sor | fraction``.

    ``param`` is the over-relaxation ``omega`` in ``[0, 1)`` for ``sor`` and
    the fraction ``gamma > 0`` for ``fraction``.
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in _STEP_KINDS:
            raise ValueError(f"unknown step rule {self.kind!r}")
        if self.kind == "sor" and not 0.0 <= self.param < 1.0:
            raise ValueError("omega must lie in [0, 1)")
        if self.kind == "fraction" and not self.param > 0.0:
            raise ValueError("gamma must be positive")

    @classmethod
    def fixed_lmax(cls):
        return cls("fixed_lmax")

    @classmethod
    def per_coordinate(cls):
        return cls("per_coord")

    @classmethod
    def exact(cls):
        return cls("exact")

    @classmethod
    def over_relaxed(cls, omega: float):
        return cls("sor", float(omega))

    @classmethod
    def fraction(cls, gamma: float):
        return cls("fraction", float(gamma))

    @property
    def label(self) -> str:
        if self.kind in ("sor", "fraction"):
            return f"{self.kind}:{self.param:g}"
        return self.kind


def parse_step_rule(text: str) -> StepRule:
    key, _, arg = text.strip().lower().partition(":")
    if key in ("sor", "fraction"):
        if not arg:
            raise ValueError(f"step rule {key!r} needs a parameter, e.g. {key}:0.5")
        return StepRule(key, float(arg))
    if arg:
        raise ValueError(f"step rule {key!r} takes no parameter")
    return StepRule(key)


def steplength(rule: StepRule, profile, problem=None, x=None, i: int = 0, g_i=None) -> float:
    """The steplength ``alpha`` the rule assigns to coordinate ``i``.

    On quadratics the exact line search along ``e_i`` is ``1/Q_ii`` whatever
    the current point, so ``x`` and ``g_i`` are accepted but unused.
    """
    if rule.kind == "fixed_lmax":
        if not profile.l_max > 0:
            raise ValueError("L_max is zero")
        return 1.0 / profile.l_max
    if rule.kind == "fraction":
        if not profile.l_max > 0:
            raise ValueError("L_max is zero")
        return rule.param / profile.l_max
    Li = float(profile.per_coordinate[i])
    if Li == 0.0:
        raise ValueError(f"coordinate {i} has zero curvature; rule {rule.label} divides by it")
    if rule.kind == "per_coord" or rule.kind == "exact":
        return 1.0 / Li
    return (1.0 + rule.param) / Li


def step_vector(rule: StepRule, profile) -> np.ndarray:
    """Per-coordinate steplengths for the compiled drivers.

    Coordinates with ``L_i = 0`` and zero linear term never move; they get
    ``alpha_i = 0``. Any ``L_i = 0`` with a nonzero linear term is rejected.
    """
    if profile.degenerate.any():
        j = int(np.flatnonzero(profile.degenerate)[0])
        raise ValueError(f"coordinate {j} has zero curvature and a nonzero linear term")
    n = profile.n
    if rule.kind in ("fixed_lmax", "fraction"):
        a = np.full(n, steplength(rule, profile))
    else:
        Li = profile.per_coordinate
        scale = 1.0 + rule.param if rule.kind == "sor" else 1.0
        with np.errstate(divide="ignore"):
            a = np.where(Li > 0, scale / np.where(Li > 0, Li, 1.0), 0.0)
    a[profile.zero_coordinates] = 0.0
    return a
