"""Benchmark grids, a bounded worker pool and versioned CSV tables.

Every table starts with two comment lines, ``# schema: <name>/<version>`` and
``# config: <json>``, followed by an ordinary CSV header and rows. Value
columns are written with ``repr`` so reruns with the same seeds compare
bit-identically; timing columns end in ``_ms``.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .measures import ProblemInstance
from .solvers import SolverConfig, solve
from .testbed import (
    gen_fragmented_hypercube,
    gen_wishart_gaussian,
    reference_wasserstein,
    relative_error,
    subspace_error,
)

SCHEMA_VERSION = 1
PHASES = ("cost", "sinkhorn", "gradient", "retraction")
NOISE_GRID = (0.01, 0.1, 1.0, 2.0, 4.0, 7.0, 10.0)

HYPERCUBE_COLUMNS = (
    "algorithm", "n", "d", "k", "k_star", "seed", "repeat",
    "prw_value", "subspace_error", "iterations", "converged", "status",
    "wall_ms", *(f"{p}_ms" for p in PHASES),
)
GAUSSIAN_COLUMNS = (
    "algorithm", "n", "d", "k", "k_star", "seed", "sigma",
    "prw_value", "w2_ref", "w2_ref_gap", "ratio", "rel_error", "w2_rel_error",
    "iterations", "converged", "status", "wall_ms", *(f"{p}_ms" for p in PHASES),
)


@dataclass(frozen=True)
class Cell:
    """One solve of a benchmark grid; ``index`` fixes its place in the output."""

    index: int
    kind: str
    algorithm: str
    n: int
    d: int
    k: int
    k_star: int
    seed: int
    repeat: int = 0
    sigma: float = 0.0


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path, schema: str, columns, rows, config: dict | None = None) -> None:
    with open(Path(path), "w", newline="") as fh:
        fh.write(f"# schema: {schema}/{SCHEMA_VERSION}\n")
        fh.write(f"# config: {json.dumps(config or {}, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def _parse(tok: str):
    if tok in ("true", "false"):
        return tok == "true"
    for cast in (int, float):
        try:
            return cast(tok)
        except ValueError:
            pass
    return tok


def read_table(path) -> tuple[dict, list[dict]]:
    """Parse a table written by :func:`write_table`; returns (meta, rows)."""
    meta = {}
    with open(Path(path), newline="") as fh:
        body = []
        for line in fh:
            if line.startswith("# schema:"):
                name, _, version = line.split(":", 1)[1].strip().rpartition("/")
                meta["schema"], meta["version"] = name, int(version)
            elif line.startswith("# config:"):
                meta["config"] = json.loads(line.split(":", 1)[1])
            elif not line.startswith("#"):
                body.append(line)
    rows = [{k: _parse(v) for k, v in rec.items()} for rec in csv.DictReader(body)]
    return meta, rows


def _timing(result) -> dict:
    out = {"wall_ms": 1e3 * result.wall_time}
    for p in PHASES:
        out[f"{p}_ms"] = 1e3 * result.phase_times.get(p, 0.0)
    return out


def _instance(cell: Cell) -> tuple[ProblemInstance, np.ndarray | None]:
    if cell.kind == "hypercube":
        inst, truth = gen_fragmented_hypercube(cell.n, cell.d, cell.k_star, seed=cell.seed)
        return inst, truth.U_star
    return gen_wishart_gaussian(cell.n, cell.d, cell.k_star, cell.sigma, seed=cell.seed), None


def run_cell(cell: Cell, config: dict, reference: bool = True) -> dict:
    """Solve one cell; failures come back as a row with ``status='error: ...'``.

    Gaussian cells also get the entropic W^2 reference unless ``reference`` is off.
    """
    row = {
        "algorithm": cell.algorithm, "n": cell.n, "d": cell.d, "k": cell.k,
        "k_star": cell.k_star, "seed": cell.seed, "repeat": cell.repeat, "sigma": cell.sigma,
    }
    try:
        inst, U_star = _instance(cell)
        cfg = SolverConfig.from_dict({**config, "k": cell.k, "seed": cell.seed})
        res = solve(inst, cfg, cell.algorithm)
    except Exception as exc:  # recorded per row, the grid keeps going
        row.update(prw_value=math.nan, iterations=0, converged=False, status=f"error: {exc}")
        return row
    row.update(
        prw_value=res.prw_value,
        iterations=res.iterations,
        converged=res.converged,
        status="ok" if res.converged else "max_iter",
        **_timing(res),
    )
    if U_star is not None:
        # zero only when k = k* and the planted subspace is recovered
        row["subspace_error"] = subspace_error(res.U_hat, U_star)
    if cell.kind == "gaussian" and reference:
        ref = reference_wasserstein(inst)
        row.update(w2_ref=ref.value, w2_ref_gap=ref.gap_bound, ratio=res.prw_value / ref.value)
    return row


def _star(args):
    return run_cell(*args)


def run_cells(cells, config: dict, workers: int = 1, reference: bool = True) -> list[dict]:
    """Run cells on at most ``workers`` processes; rows come back in cell order."""
    cells = sorted(cells, key=lambda c: c.index)
    jobs = [(c, config, reference) for c in cells]
    if workers <= 1 or len(jobs) <= 1:
        return [_star(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_star, jobs))


def hypercube_grid(algorithms, ns, ds, ks, k_stars, seeds, repeats: int = 1, kind: str = "hypercube") -> list[Cell]:
    """Cells in (algorithm, n, d, k, k*, seed, repeat) order. ``kind='gaussian'`` swaps in clean Gaussian clouds."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    grid = itertools.product(algorithms, ns, ds, ks, k_stars, seeds, range(repeats))
    return [Cell(i, kind, *spec) for i, spec in enumerate(grid)]


def gaussian_grid(algorithms, ns, ds, ks, k_stars, seeds, sigmas) -> list[Cell]:
    """Cells for the noise sweep; the clean (sigma = 0) baseline is always included."""
    if not sigmas:
        raise ValueError("empty noise grid: give at least one sigma")
    if any(not (math.isfinite(s) and s >= 0) for s in sigmas):
        raise ValueError("noise levels must be finite and >= 0")
    levels = sorted({0.0, *map(float, sigmas)})
    grid = itertools.product(algorithms, ns, ds, ks, k_stars, seeds, levels)
    return [Cell(i, "gaussian", a, n, d, k, ks_, s, 0, sigma) for i, (a, n, d, k, ks_, s, sigma) in enumerate(grid)]


def attach_relative_errors(rows: list[dict]) -> None:
    """Fill ``rel_error`` / ``w2_rel_error`` against the clean run with the same seed."""
    clean = {}
    for row in rows:
        if row["sigma"] == 0.0:
            clean[_group(row)] = row
    for row in rows:
        base = clean.get(_group(row))
        if base is None:
            continue
        if base.get("prw_value") and math.isfinite(base["prw_value"]):
            row["rel_error"] = relative_error(row["prw_value"], base["prw_value"])
        if base.get("w2_ref") and "w2_ref" in row:
            row["w2_rel_error"] = relative_error(row["w2_ref"], base["w2_ref"])


def _group(row) -> tuple:
    return (row["algorithm"], row["n"], row["d"], row["k"], row["k_star"], row["seed"])


def summarize(rows: list[dict], keys, values) -> list[dict]:
    """mean / min / max / median of each value column per cell ``keys``, failed rows skipped."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, members in groups.items():
        rec = dict(zip(keys, key))
        ok = [m for m in members if not str(m.get("status", "ok")).startswith("error")]
        rec["runs"] = len(members)
        rec["failed"] = len(members) - len(ok)
        for col in values:
            xs = [m[col] for m in ok if isinstance(m.get(col), (int, float)) and math.isfinite(m[col])]
            if xs:
                rec[f"{col}_mean"] = math.fsum(xs) / len(xs)
                rec[f"{col}_min"] = min(xs)
                rec[f"{col}_max"] = max(xs)
                rec[f"{col}_median"] = statistics.median(xs)
        out.append(rec)
    return out


def summary_columns(keys, values) -> list[str]:
    cols = list(keys) + ["runs", "failed"]
    for col in values:
        cols += [f"{col}_{s}" for s in ("mean", "min", "max", "median")]
    return cols
