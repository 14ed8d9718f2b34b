"""Command-line interface: ``cdkit {gen,run,verify,grid,kaczmarz,async}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .io import (load_json, problem_from_descriptor, read_matrix, read_vector, write_json,
                 write_manifest, write_problem, write_vector)
from .problems import CompositeProblem, LinearSystemProblem, QuadraticProblem, SeparableRegularizer
from .rng import make_rng
from .trace import ConvergenceTrace

RUN_DEFAULTS = {"algo": "cd", "schedule": "iid", "step": "fixed_lmax", "budget": 1000,
                "stride": 100, "seed": 0, "seeds": None, "x0": "normal", "x0_seed": 0,
                "reg": "none", "lam": 0.0, "sigma": None, "target_gap": None}


def _run_config(path, seed=None) -> dict:
    cfg = load_json(path)
    if "problem" not in cfg:
        cfg = {"problem": cfg}
    full = dict(RUN_DEFAULTS)
    full.update(cfg)
    if seed is not None:
        full["seed"] = seed
        full["seeds"] = None
    return full


def _seeds(cfg) -> list:
    if cfg.get("seeds") is None:
        return [cfg["seed"]]
    s = cfg["seeds"]
    return list(range(s)) if isinstance(s, int) else list(s)


def _build(cfg):
    prob = problem_from_descriptor(cfg["problem"])
    if isinstance(prob, QuadraticProblem) and cfg["reg"] != "none":
        reg = SeparableRegularizer.l1() if cfg["reg"] == "l1" else SeparableRegularizer.box(
            cfg.get("lower", -1.0), cfg.get("upper", 1.0))
        prob = CompositeProblem(prob, reg, float(cfg["lam"]))
    return prob


def _x0(cfg, dim):
    spec = cfg["x0"]
    if spec == "normal":
        return make_rng(cfg["x0_seed"], 7).standard_normal(dim)
    if spec == "zeros":
        return np.zeros(dim)
    return read_vector(spec)


def _solve(prob, cfg, seed) -> ConvergenceTrace:
    from .accel import run_accel_cd
    from .kaczmarz import (run_accel_kaczmarz_dense, run_accel_kaczmarz_sparse,
                           run_randomized_kaczmarz)
    from .reference import reference_optimum
    from .schedules import make_schedule, parse_step_rule
    from .serial import run_cd, run_prox_cd

    algo = cfg["algo"]
    x0 = _x0(cfg, prob.n)
    budget, stride = int(cfg["budget"]), int(cfg["stride"])
    if isinstance(prob, LinearSystemProblem):
        runner = {"kaczmarz": run_randomized_kaczmarz, "plain": run_randomized_kaczmarz,
                  "accel-dense": run_accel_kaczmarz_dense,
                  "accel-sparse": run_accel_kaczmarz_sparse}.get(algo)
        if runner is None:
            raise SystemExit(f"algorithm {algo!r} does not apply to linear systems")
        if runner is run_randomized_kaczmarz:
            return runner(prob, x0, budget, stride, seed)
        return runner(prob, x0, cfg["sigma"], budget, stride, seed)
    if isinstance(prob, CompositeProblem) and prob.known_hstar is None:
        reference_optimum(prob)
    elif isinstance(prob, QuadraticProblem) and prob.known_fstar is None:
        reference_optimum(prob)
    if algo == "accel":
        return run_accel_cd(prob, x0, cfg["sigma"], budget, stride, seed,
                            target_gap=cfg["target_gap"])
    schedule = make_schedule(cfg["schedule"], prob.n, seed)
    rule = parse_step_rule(cfg["step"])
    if algo == "prox" or isinstance(prob, CompositeProblem):
        return run_prox_cd(prob, schedule, rule, x0, budget, stride, cfg["target_gap"])
    if algo != "cd":
        raise SystemExit(f"unknown algorithm {algo!r}")
    return run_cd(prob, schedule, rule, x0, budget, stride, cfg["target_gap"])


def _trace_name(label, seed):
    return f"trace_{label.replace('/', '_').replace(':', '-')}_seed{seed}.csv"


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen(args):
    if args.config:
        desc = load_json(args.config)
        desc = desc.get("problem", desc)
    else:
        desc = {"kind": args.kind, "seed": args.seed}
        for key in ("n", "r", "cond", "eta", "zeta", "m", "density", "nnz_per_row"):
            val = getattr(args, key)
            if val is not None:
                desc[key] = val
    if args.seed is not None:
        desc["seed"] = args.seed
    prob = problem_from_descriptor(desc)
    files = write_problem(args.out, prob)
    write_manifest(args.out, desc, list(files.values()))
    print(json.dumps(files))
    return 0


def cmd_run(args):
    cfg = _run_config(args.config, args.seed)
    prob = _build(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x0 = _x0(cfg, prob.n)
    write_vector(out / "x0.vec", x0)
    outputs = ["x0.vec"]
    for seed in _seeds(cfg):
        tr = _solve(prob, cfg, seed)
        name = _trace_name(tr.label, seed)
        tr.to_csv(out / name)
        outputs.append(name)
        print(f"{name}: k={tr.k[-1]} objective={tr.objective[-1]:.6g} gap={tr.gap[-1]:.3e}")
    write_manifest(out, cfg, outputs)
    return 0


def cmd_verify(args):
    from .bounds import bound_envelope, verify_envelope
    cfg = _run_config(args.config)
    prob = _build(cfg)
    paths = sorted(Path(args.traces).glob("*.csv")) if Path(args.traces).is_dir() else \
        [Path(p) for p in args.traces.split(",")]
    traces = [ConvergenceTrace.from_csv(p) for p in paths]
    if not traces:
        print("no traces found", file=sys.stderr)
        return 1
    x0 = read_vector(args.x0) if args.x0 else _x0(cfg, prob.n)
    env = bound_envelope(args.theorem, prob, x0, traces[0].ks)
    try:
        rep = verify_envelope(traces, env, args.slack, min_traces=args.min_traces)
    except ValueError as exc:
        print(f"FAIL {args.theorem}: {exc}")
        return 1
    print(rep)
    if args.out:
        write_json(Path(args.out), {"theorem": rep.theorem_id, "passed": rep.passed,
                                    "worst_ratio": rep.worst_ratio, "worst_k": rep.worst_k,
                                    "slack": rep.slack, "traces": rep.n_traces,
                                    "message": rep.message, "params": env.params})
    return 0 if rep.passed else 1


def cmd_grid(args):
    from .grid import ExperimentGrid, run_experiment_grid
    cfg = load_json(args.config)
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    grid = ExperimentGrid.from_config(cfg)
    res = run_experiment_grid(grid, args.out, workers=args.workers)
    for row in res["comparison"]:
        print(f"cell {row['cell']} step={row['step']}: IID/EPOCHS={row['iid_over_epochs']:.3f} "
              f"CYCLIC/IID={row['cyclic_over_iid']:.3f}")
    censored = sum(r["censored"] for r in res["runs"])
    print(f"{len(res['runs'])} runs, {censored} censored; tables in {args.out}")
    return 0


def cmd_kaczmarz(args):
    from .kaczmarz import (run_accel_kaczmarz_dense, run_accel_kaczmarz_sparse,
                           run_randomized_kaczmarz)
    A = read_matrix(args.matrix)
    b = read_vector(args.rhs)
    system = LinearSystemProblem(A, b, row_tol=args.row_tol)
    w0 = read_vector(args.w0) if args.w0 else np.zeros(system.n)
    stride = args.stride or max(args.iters // 100, 1)
    if args.algo == "plain":
        tr = run_randomized_kaczmarz(system, w0, args.iters, stride, args.seed)
    elif args.algo == "accel-dense":
        tr = run_accel_kaczmarz_dense(system, w0, args.sigma, args.iters, stride, args.seed)
    else:
        tr = run_accel_kaczmarz_sparse(system, w0, args.sigma, args.iters, stride, args.seed)
    tr.to_csv(args.trace)
    print(f"{tr.label}: k={tr.k[-1]} dist^2={tr.gap[-1]:.3e} flops={tr.flops[-1]}")
    return 0


def cmd_async(args):
    from .async_cd import AsyncConfig, parse_policy, run_async_threads, simulate_async_cd
    from .reference import reference_optimum
    if args.config:
        desc = load_json(args.config)
        prob = problem_from_descriptor(desc.get("problem", desc))
    else:
        M = read_matrix(args.matrix)
        prob = QuadraticProblem(M, read_vector(args.rhs) if args.rhs else None)
    if not isinstance(prob, QuadraticProblem):
        raise SystemExit("async runs need a quadratic problem")
    if prob.known_fstar is None:
        reference_optimum(prob)
    x0 = make_rng(args.seed, 7).standard_normal(prob.n)
    stride = args.stride or max(args.iters // 100, 1)
    delay = parse_policy(args.policy, args.seed)
    if delay is None:
        cfg = AsyncConfig(args.threads, args.gamma, args.iters, stride, args.seed)
        tr = run_async_threads(prob, cfg, x0)
    else:
        tr = simulate_async_cd(prob, delay, args.gamma, args.iters, stride, args.seed, x0=x0)
    tr.to_csv(args.trace)
    print(f"{tr.label}: k={tr.k[-1]} gap={tr.gap[-1]:.3e} "
          f"max_staleness={tr.info.get('max_staleness')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdkit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a generated problem to files")
    g.add_argument("--config", help="JSON problem descriptor")
    g.add_argument("--kind", default="synthetic", choices=["synthetic", "linear_system", "sparse"])
    for key, typ in (("n", int), ("r", int), ("cond", float), ("eta", float), ("zeta", float),
                     ("m", int), ("density", float), ("nnz-per-row", int)):
        g.add_argument(f"--{key}", type=typ, dest=key.replace("-", "_"))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="solve once per seed and write trace CSVs")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="check traces against a bound envelope")
    v.add_argument("--config", required=True, help="the run config that produced the traces")
    v.add_argument("--traces", required=True, help="directory of CSVs or comma-separated list")
    v.add_argument("--theorem", required=True)
    v.add_argument("--slack", type=float, default=1.1)
    v.add_argument("--min-traces", type=int)
    v.add_argument("--x0", help="starting point file (default: rebuilt from the config)")
    v.add_argument("--out", help="write the report as JSON")
    v.set_defaults(func=cmd_verify)

    gr = sub.add_parser("grid", help="run the six-variant comparison grid")
    gr.add_argument("--config", required=True)
    gr.add_argument("--seed", type=int)
    gr.add_argument("--workers", type=int, default=1)
    gr.add_argument("--out", required=True)
    gr.set_defaults(func=cmd_grid)

    k = sub.add_parser("kaczmarz", help="randomized Kaczmarz variants on Aw = b")
    k.add_argument("--matrix", required=True)
    k.add_argument("--rhs", required=True)
    k.add_argument("--algo", choices=["plain", "accel-dense", "accel-sparse"], default="plain")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--iters", type=int, default=10_000)
    k.add_argument("--stride", type=int)
    k.add_argument("--sigma", type=float)
    k.add_argument("--w0")
    k.add_argument("--row-tol", type=float, default=1e-12)
    k.add_argument("--trace", required=True)
    k.set_defaults(func=cmd_kaczmarz)

    a = sub.add_parser("async", help="asynchronous CD (threads or delay simulator)")
    a.add_argument("--threads", type=int, default=1)
    a.add_argument("--gamma", type=float, default=0.5)
    a.add_argument("--policy", default="real",
                   help="real | noDelay | fixedAge:TAU | random:TAU | worst:TAU")
    a.add_argument("--config", help="JSON problem descriptor")
    a.add_argument("--matrix")
    a.add_argument("--rhs")
    a.add_argument("--iters", type=int, default=100_000)
    a.add_argument("--stride", type=int)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--trace", required=True)
    a.set_defaults(func=cmd_async)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
