"""File formats: MatrixMarket matrices, text vectors, JSON descriptors and run manifests."""
from __future__ import annotations

import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import scipy.io
import scipy.sparse as sp

from . import __version__
from .problems import (LinearSystemProblem, QuadraticProblem, as_csr, generate_linear_system,
                       generate_sparse_quadratic, generate_synthetic)


def read_matrix(path) -> sp.csr_matrix:
    """Read a MatrixMarket file (coordinate or array) as CSR."""
    M = scipy.io.mmread(str(path))
    return as_csr(M)


def write_matrix(path, M) -> Path:
    path = Path(path)
    scipy.io.mmwrite(str(path), sp.coo_matrix(M), precision=17)
    # mmwrite appends .mtx when the suffix is missing
    return path if path.suffix == ".mtx" else path.with_name(path.name + ".mtx")


def read_vector(path) -> np.ndarray:
    """Whitespace-separated numbers, one column (any layout is flattened)."""
    return np.atleast_1d(np.loadtxt(str(path), dtype=np.float64)).reshape(-1)


def write_vector(path, v) -> Path:
    np.savetxt(str(path), np.asarray(v, dtype=np.float64).reshape(-1, 1), fmt="%.17g")
    return Path(path)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def config_hash(config) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def load_json(path) -> dict:
    with Path(path).open() as fh:
        return json.load(fh)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def problem_from_descriptor(desc: dict, seed_override=None):
    """Build a problem from ``{"kind": ..., ...}``.

    Kinds: ``synthetic`` (n, r, cond, eta, zeta, seed[, storage]), ``linear_system``
    (m, n, density, seed[, rank]), ``sparse`` (n, nnz_per_row, seed[, margin]),
    and ``files`` (matrix, rhs paths; ``"system": true`` for ``Aw = b``).
    """
    kind = desc.get("kind")
    seed = desc.get("seed", 0) if seed_override is None else seed_override
    if kind == "synthetic":
        return generate_synthetic(int(desc["n"]), int(desc.get("r", desc["n"])),
                                  float(desc.get("cond", 1.0)), float(desc.get("eta", 1.0)),
                                  float(desc.get("zeta", 0.0)), seed,
                                  storage=desc.get("storage", "dense"))
    if kind == "linear_system":
        rank = desc.get("rank")
        return generate_linear_system(int(desc["m"]), int(desc["n"]),
                                      float(desc.get("density", 1.0)), seed,
                                      rank=None if rank is None else int(rank))
    if kind == "sparse":
        return generate_sparse_quadratic(int(desc["n"]), int(desc.get("nnz_per_row", 10)), seed,
                                         margin=float(desc.get("margin", 0.25)))
    if kind == "files":
        M = read_matrix(desc["matrix"])
        rhs = read_vector(desc["rhs"]) if desc.get("rhs") else None
        if desc.get("system"):
            return LinearSystemProblem(M, rhs)
        return QuadraticProblem(M, rhs)
    raise ValueError(f"unknown problem kind {kind!r}")


def write_problem(out_dir, problem) -> dict:
    """Write the problem's matrix, right-hand side and descriptor; return file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if isinstance(problem, LinearSystemProblem):
        files["matrix"] = write_matrix(out / "A.mtx", problem.A).name
        files["rhs"] = write_vector(out / "b.vec", problem.b).name
        if problem.w_true is not None:
            files["w_true"] = write_vector(out / "w_true.vec", problem.w_true).name
    else:
        M = problem.factor.U if problem.storage == "lowrank" else problem.Q
        name = "U.mtx" if problem.storage == "lowrank" else "Q.mtx"
        files["matrix"] = write_matrix(out / name, M).name
        files["rhs"] = write_vector(out / "b.vec", problem.b).name
    if getattr(problem, "descriptor", None):
        files["descriptor"] = write_json(out / "problem.json", problem.descriptor).name
    return files


def versions() -> dict:
    import numba
    return {"cdkit": __version__, "python": sys.version.split()[0],
            "platform": platform.platform(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(out_dir, config, outputs=None, **extra) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": config, "config_hash": config_hash(config), "versions": versions(),
                "outputs": sorted(outputs or [])}
    manifest.update(extra)
    return write_json(out / "manifest.json", manifest)
