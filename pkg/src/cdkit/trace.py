"""Checkpointed run records and their CSV form."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BASE_COLUMNS = ("k", "objective", "gap", "wall_ns", "flops")


class DivergenceError(RuntimeError):
    """Raised when a run's objective leaves the admissible range."""

    def __init__(self, message: str, trace: "ConvergenceTrace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass
class ConvergenceTrace:
    """Per-checkpoint record of one run.

    ``gap`` is ``nan`` when no reference optimum is known. ``wall_ns`` is the
    cumulative time spent inside the algorithm, excluding checkpoint work.
    ``extra`` holds additional columns (one entry per checkpoint) and
    ``info`` run-level scalars such as the final iteration count.
    """

    label: str = ""
    seed: object = None
    k: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    wall_ns: list = field(default_factory=list)
    flops: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    final_x: np.ndarray | None = None
    snapshots: list | None = None
    stopped: str = "budget"

    def record(self, k: int, objective: float, gap: float, wall_ns: int, flops: int, **extra):
        if self.k and k <= self.k[-1]:
            raise ValueError("checkpoint iterations must be strictly increasing")
        self.k.append(int(k))
        self.objective.append(float(objective))
        self.gap.append(float(gap))
        self.wall_ns.append(int(wall_ns))
        self.flops.append(int(flops))
        for key, val in extra.items():
            self.extra.setdefault(key, []).append(val)

    def __len__(self):
        return len(self.k)

    @property
    def ks(self) -> np.ndarray:
        return np.asarray(self.k, dtype=np.int64)

    @property
    def gaps(self) -> np.ndarray:
        return np.asarray(self.gap, dtype=np.float64)

    @property
    def objectives(self) -> np.ndarray:
        return np.asarray(self.objective, dtype=np.float64)

    @property
    def iterations(self) -> int:
        """Iterations actually performed (may exceed the last checkpoint)."""
        return int(self.info.get("iterations", self.k[-1] if self.k else 0))

    def same_values(self, other: "ConvergenceTrace") -> bool:
        """Bit-identical ``k``, objective, gap, flops and final iterate."""
        def eq(a, b):
            return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)
        return (eq(self.k, other.k) and eq(self.objective, other.objective)
                and eq(self.gap, other.gap) and eq(self.flops, other.flops)
                and eq(self.final_x, other.final_x))

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = list(BASE_COLUMNS) + list(self.extra)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in range(len(self.k)):
                vals = [self.k[row], repr(self.objective[row]), repr(self.gap[row]),
                        self.wall_ns[row], self.flops[row]]
                vals += [self.extra[c][row] for c in self.extra]
                w.writerow(vals)
        return path

    @classmethod
    def from_csv(cls, path, label: str = "", seed=None) -> "ConvergenceTrace":
        tr = cls(label=label, seed=seed)
        with Path(path).open(newline="") as fh:
            rd = csv.DictReader(fh)
            missing = set(BASE_COLUMNS) - set(rd.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            others = [c for c in rd.fieldnames if c not in BASE_COLUMNS]
            for row in rd:
                extra = {}
                for c in others:
                    try:
                        extra[c] = float(row[c])
                    except ValueError:
                        extra[c] = row[c]
                tr.record(int(row["k"]), float(row["objective"]), float(row["gap"]),
                          int(row["wall_ns"]), int(row["flops"]), **extra)
        return tr


class Stopwatch:
    """Accumulates time only across explicitly bracketed sections."""

    def __init__(self):
        self.total = 0
        self._t0 = None

    def __enter__(self):
        self._t0 = time.perf_counter_ns()
        return self

    def __exit__(self, *exc):
        self.total += time.perf_counter_ns() - self._t0
        self._t0 = None
        return False


def checkpoint_plan(budget: int, stride: int) -> list[int]:
    """Checkpoint iteration counts: 0, stride, 2*stride, ..., and ``budget``."""
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if stride < 1:
        raise ValueError("checkpoint stride must be positive")
    ks = list(range(0, budget + 1, stride))
    if ks[-1] != budget:
        ks.append(budget)
    return ks
