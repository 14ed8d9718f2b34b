"""Six-variant comparison grid on synthetic quadratics, plus a full-gradient baseline."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .problems import QuadraticProblem, generate_synthetic, lipschitz_profile
from .rng import make_rng, seed_sequence
from .schedules import make_schedule, parse_step_rule
from .serial import run_cd
from .trace import ConvergenceTrace, DivergenceError, Stopwatch, checkpoint_plan

SCHEDULES = ("cyclic", "iid", "epochs")
STEPS = ("fixed_lmax", "exact")


@dataclass
class ExperimentGrid:
    """Cells of synthetic-instance parameters crossed with schedule and step variants.

    Each cell is a dict with keys ``n, r, cond, eta, zeta``. A run stops when
    ``f(x) <= termination * f(x0)``, or is censored at ``cap`` iterations.
    """

    cells: list = field(default_factory=list)
    schedules: tuple = SCHEDULES
    steps: tuple = STEPS
    seeds: int = 5
    termination: float = 1e-6
    cap: int = 10**7
    master_seed: int = 0

    def __post_init__(self):
        if not self.cells:
            raise ValueError("the grid has no cells")
        for c in self.cells:
            missing = {"n", "r", "cond", "eta", "zeta"} - set(c)
            if missing:
                raise ValueError(f"cell {c} lacks {sorted(missing)}")
        for s in self.schedules:
            make_schedule(s, 1)
        for s in self.steps:
            parse_step_rule(s)
        if self.seeds < 1:
            raise ValueError("need at least one seed per cell")

    @classmethod
    def from_config(cls, cfg: dict) -> "ExperimentGrid":
        keys = {"cells", "schedules", "steps", "seeds", "termination", "cap", "master_seed"}
        unknown = set(cfg) - keys
        if unknown:
            raise ValueError(f"unknown grid keys {sorted(unknown)}")
        kw = dict(cfg)
        for k in ("schedules", "steps"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def to_config(self) -> dict:
        d = asdict(self)
        d["schedules"] = list(self.schedules)
        d["steps"] = list(self.steps)
        return d

    @property
    def variants(self) -> list[tuple[str, str]]:
        return [(s, r) for s in self.schedules for r in self.steps]


def cell_seed(master_seed: int, cell: int) -> int:
    return int(seed_sequence(master_seed, 100, cell).generate_state(1, np.uint64)[0] >> 1)


@lru_cache(maxsize=8)
def _cell_problem(n, r, cond, eta, zeta, seed) -> QuadraticProblem:
    return generate_synthetic(n, r, cond, eta, zeta, seed)


def _job(args):
    grid_cfg, c, s = args
    grid = ExperimentGrid.from_config(grid_cfg)
    cell = grid.cells[c]
    q = _cell_problem(int(cell["n"]), int(cell["r"]), float(cell["cond"]), float(cell["eta"]),
                      float(cell["zeta"]), cell_seed(grid.master_seed, c))
    n = q.n
    x0 = make_rng(grid.master_seed, 200, c, s).standard_normal(n)
    f0 = q.value(x0)
    rows = []
    for sched, step in grid.variants:
        schedule = make_schedule(sched, n, seed=seed_sequence(grid.master_seed, 300, c, s))
        rule = parse_step_rule(step)
        try:
            tr = run_cd(q, schedule, rule, x0, grid.cap, min(grid.cap, 100 * n),
                        target_objective=grid.termination * f0)
            its, censored, final = tr.iterations, tr.stopped != "target", tr.objective[-1]
        except DivergenceError as exc:
            its, censored, final = exc.trace.iterations, True, math.nan
        rows.append(dict(cell=c, **{k: cell[k] for k in ("n", "r", "cond", "eta", "zeta")},
                         schedule=sched, step=rule.label, seed=s, iterations=its,
                         censored=int(censored), final_ratio=final / f0))
    return rows


def _write_csv(path, rows):
    if not rows:
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def run_experiment_grid(grid: ExperimentGrid, out_dir=None, workers: int = 1) -> dict:
    """Run every (cell, seed, variant) and aggregate iteration counts.

    Returns ``{"runs": [...], "summary": [...], "comparison": [...]}``. The
    comparison rows give, per cell and step rule, the median-iteration ratios
    IID/EPOCHS and CYCLIC/IID. With ``out_dir`` the three tables are written as
    ``runs.csv``, ``summary.csv`` and ``comparison.csv`` with a manifest.
    Censored runs count at the cap.
    """
    cfg = grid.to_config()
    jobs = [(cfg, c, s) for c in range(len(grid.cells)) for s in range(grid.seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_job, jobs))
    else:
        chunks = [_job(j) for j in jobs]
    runs = [r for chunk in chunks for r in chunk]

    summary = []
    med = {}
    for c, cell in enumerate(grid.cells):
        for sched, step in grid.variants:
            label = parse_step_rule(step).label
            sel = [r for r in runs if r["cell"] == c and r["schedule"] == sched
                   and r["step"] == label]
            its = np.array([r["iterations"] for r in sel], dtype=np.float64)
            m = float(np.median(its))
            med[(c, sched, label)] = m
            summary.append(dict(cell=c, **{k: cell[k] for k in ("n", "r", "cond", "eta", "zeta")},
                                schedule=sched, step=label, seeds=len(sel),
                                mean_iterations=float(its.mean()), median_iterations=m,
                                censored=sum(r["censored"] for r in sel)))
    comparison = []
    for c, cell in enumerate(grid.cells):
        for step in grid.steps:
            label = parse_step_rule(step).label
            get = med.get
            row = dict(cell=c, **{k: cell[k] for k in ("n", "r", "cond", "eta", "zeta")},
                       step=label)
            iid, ep, cyc = get((c, "iid", label)), get((c, "epochs", label)), get((c, "cyclic", label))
            row["iid_over_epochs"] = iid / ep if iid is not None and ep else math.nan
            row["cyclic_over_iid"] = cyc / iid if cyc is not None and iid else math.nan
            comparison.append(row)
    result = {"runs": runs, "summary": summary, "comparison": comparison}
    if out_dir is not None:
        from .io import write_manifest
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "runs.csv", runs)
        _write_csv(out / "summary.csv", summary)
        _write_csv(out / "comparison.csv", comparison)
        write_manifest(out, cfg, ["runs.csv", "summary.csv", "comparison.csv"])
    return result


def run_full_gradient(problem: QuadraticProblem, x0, budget: int, checkpoint_stride: int,
                      L: float | None = None) -> ConvergenceTrace:
    """Gradient descent ``x <- x - grad f(x) / L``; each iteration costs one product with ``Q``."""
    if L is None:
        L = lipschitz_profile(problem, compute_sigma=False).l_std
    x = np.array(x0, dtype=np.float64)
    fstar = math.nan if problem.known_fstar is None else problem.known_fstar
    nnz = problem.factor.U.size * 2 if problem.storage == "lowrank" else problem.csr.nnz
    trace = ConvergenceTrace(label="full-gradient")
    f = problem.value(x)
    trace.record(0, f, f - fstar, 0, 0)
    clock = Stopwatch()
    done = 0
    for k_next in checkpoint_plan(budget, checkpoint_stride)[1:]:
        with clock:
            for _ in range(k_next - done):
                x -= (problem.matvec(x) - problem.b) / L
        done = k_next
        f = problem.value(x)
        trace.record(done, f, f - fstar, clock.total, done * (2 * nnz + 3 * problem.n))
    trace.final_x = x
    trace.info["iterations"] = done
    return trace
