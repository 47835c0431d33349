"""Command-line front end.

    prwbcd compute MU NU [solver flags]
    prwbcd bench-hypercube --k 1,2,3,4,5,6 --seeds 0,1,2 --out runs/
    prwbcd bench-gaussian --sigmas 0.01,1,10 --out runs/
    prwbcd bench-time --n 500 --d 50 --repeats 10 --out runs/
    prwbcd distmatrix CORPUS_DIR --out runs/

Solver settings resolve as flags > ``--config`` JSON > SolverConfig defaults,
and the effective config is echoed into every output. Exit codes: 0 success,
1 usage or I/O error, 2 a solve hit max_iter (or a pair failed).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bench
from .measures import InstanceError, guess_format, load_instance
from .solvers import ALGORITHMS, MODES, SolverConfig, SolverError, solve, stationarity_report
from .stiefel import RETRACTIONS

log = logging.getLogger("prwbcd")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2
MEASURE_SUFFIXES = (".csv", ".jsonl", ".json", ".ndjson")

# flag dest -> SolverConfig field
_CONFIG_FLAGS = {
    "k": "k", "eta": "eta", "tau": "tau", "eps1": "eps1", "eps2": "eps2",
    "mode": "mode", "alpha": "alpha", "beta": "beta", "retraction": "retraction",
    "seed": "seed", "max_iter": "max_iter", "deterministic": "deterministic",
}


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _algo_list(text: str) -> list[str]:
    algos = [t.strip() for t in text.split(",") if t.strip()]
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad or not algos:
        raise argparse.ArgumentTypeError(f"algorithms must be among {ALGORITHMS}, got {text!r}")
    return algos


def _solver_flags(p: argparse.ArgumentParser, single_k: bool = True) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--config", type=Path, help="JSON file mirroring SolverConfig")
    if single_k:
        g.add_argument("--k", type=int, help="subspace dimension")
    g.add_argument("--eta", type=float, help="entropic regularization")
    g.add_argument("--tau", type=float, help="step size")
    g.add_argument("--eps1", type=float, help="gradient tolerance")
    g.add_argument("--eps2", type=float, help="marginal tolerance")
    g.add_argument("--mode", choices=MODES)
    g.add_argument("--alpha", type=float, help="adaptive floor, p_hat/q_hat start at alpha ||C||^2")
    g.add_argument("--beta", type=float, help="adaptive moment decay")
    g.add_argument("--retraction", choices=RETRACTIONS)
    g.add_argument("--seed", type=int, help="seed for the initial subspace")
    g.add_argument("--max-iter", dest="max_iter", type=int)
    g.add_argument("--deterministic", action="store_true", default=None,
                   help="sequential, reproducible solves (always the case within one solve)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="worker processes for grids and pairs")
    p.add_argument("-v", "--verbose", action="store_true")


def _grid_flags(p, n, d, k, k_star) -> None:
    p.add_argument("--algo", type=_algo_list, default=["rbcd"], help="comma-separated algorithms")
    p.add_argument("--n", dest="ns", type=_int_list, default=[n])
    p.add_argument("--d", dest="ds", type=_int_list, default=[d])
    p.add_argument("--k", dest="ks", type=_int_list, default=[k], help="comma-separated subspace dimensions")
    p.add_argument("--k-star", dest="k_stars", type=_int_list, default=[k_star])
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds (overrides --seed)")
    p.add_argument("--repeats", type=int, default=1, help="runs per seed and cell")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prwbcd", description="Projection robust Wasserstein distances.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="PRW distance between two measure files")
    p.add_argument("mu", type=Path)
    p.add_argument("nu", type=Path)
    p.add_argument("--algo", choices=ALGORITHMS, default="rbcd")
    p.add_argument("--format", choices=("csv", "jsonl"), help="default: from the file suffix")
    p.add_argument("--normalize", action="store_true", help="rescale raw weights onto the simplex")
    p.add_argument("--no-certificate", action="store_true", help="skip the stationarity report")
    _solver_flags(p)

    p = sub.add_parser("bench-hypercube", help="fragmented hypercube grid")
    _grid_flags(p, n=100, d=30, k=2, k_star=2)
    _solver_flags(p, single_k=False)

    p = sub.add_parser("bench-gaussian", help="Gaussian recovery and noise sweep")
    _grid_flags(p, n=100, d=20, k=10, k_star=5)
    p.add_argument("--sigmas", type=_float_list, default=list(bench.NOISE_GRID),
                   help="comma-separated noise levels; the clean run is added automatically")
    _solver_flags(p, single_k=False)

    p = sub.add_parser("bench-time", help="wall-clock comparison of the solvers")
    _grid_flags(p, n=500, d=50, k=2, k_star=2)
    p.set_defaults(algo=list(ALGORITHMS))
    p.add_argument("--instance", choices=("hypercube", "gaussian"), default="hypercube")
    _solver_flags(p, single_k=False)

    p = sub.add_parser("distmatrix", help="pairwise PRW distances over a directory of measures")
    p.add_argument("corpus", type=Path)
    p.add_argument("--algo", choices=ALGORITHMS, default="rbcd")
    p.add_argument("--normalize", action="store_true")
    _solver_flags(p)
    return parser


def resolve_config(args: argparse.Namespace) -> SolverConfig:
    """Built-in defaults, overlaid by ``--config``, overlaid by explicit flags."""
    data: dict = {}
    if getattr(args, "config", None) is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    for dest, key in _CONFIG_FLAGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            data[key] = val
    try:
        return SolverConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid solver config: {exc}") from None


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {args.out}: {exc}") from None
    return args.out


def _load(mu: Path, nu: Path, fmt, normalize):
    for path in (mu, nu):
        if not path.is_file():
            raise UsageError(f"no such measure file: {path}")
    return load_instance(mu, nu, fmt or guess_format(mu), normalize)


# ---------------------------------------------------------------------------
# commands

def cmd_compute(args) -> int:
    config = resolve_config(args)
    inst = _load(args.mu, args.nu, args.format, args.normalize)
    res = solve(inst, config, args.algo)
    report = None
    if not args.no_certificate:
        try:
            report = stationarity_report(inst, res)
        except SolverError as exc:
            log.warning("stationarity report unavailable: %s", exc)
    out = {
        "algorithm": args.algo,
        "prw_value": res.prw_value,
        "grad_norm": report.grad_norm if report else None,
        "primal_gap": report.primal_gap if report else None,
        "oracle_slack": report.oracle_slack if report else None,
        "iterations": res.iterations,
        "converged": res.converged,
        "wall_ms": 1e3 * res.wall_time,
        "phase_ms": {k: 1e3 * v for k, v in res.phase_times.items()},
        "instance": inst.metadata(),
        "config": config.to_dict(),
    }
    text = json.dumps(out, indent=2)
    print(text)
    out_dir = _out_dir(args)
    if out_dir is not None:
        (out_dir / "compute.json").write_text(text + "\n")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _seeds(args, config) -> list[int]:
    return args.seeds if args.seeds else [config.seed]


def _grid_exit(rows) -> int:
    bad = [r for r in rows if r["status"] != "ok"]
    for r in bad:
        log.warning("cell %s/n=%s/d=%s/k=%s/seed=%s: %s", r["algorithm"], r["n"], r["d"], r["k"], r["seed"], r["status"])
    return EXIT_OK if not bad else EXIT_NONCONVERGED


def _write_grid(args, name, columns, rows, keys, values, config) -> None:
    out_dir = _out_dir(args)
    summary = bench.summarize(rows, keys, values)
    if out_dir is not None:
        bench.write_table(out_dir / f"{name}.csv", name, columns, rows, config)
        bench.write_table(out_dir / f"{name}_summary.csv", f"{name}-summary",
                          bench.summary_columns(keys, values), summary, config)
    for rec in summary:
        cell = " ".join(f"{k}={rec[k]}" for k in keys)
        stats = " ".join(f"{v}={rec.get(v + '_mean', math.nan):.6g}" for v in values)
        print(f"{cell}  runs={rec['runs']} failed={rec['failed']}  {stats}")


def cmd_bench_hypercube(args) -> int:
    config = resolve_config(args)
    cells = bench.hypercube_grid(args.algo, args.ns, args.ds, args.ks, args.k_stars, _seeds(args, config), args.repeats)
    rows = bench.run_cells(cells, config.to_dict(), args.workers)
    keys = ("algorithm", "n", "d", "k", "k_star")
    _write_grid(args, "bench-hypercube", bench.HYPERCUBE_COLUMNS, rows, keys,
                ("prw_value", "subspace_error", "iterations", "wall_ms"), config.to_dict())
    return _grid_exit(rows)


def cmd_bench_gaussian(args) -> int:
    config = resolve_config(args)
    try:
        cells = bench.gaussian_grid(args.algo, args.ns, args.ds, args.ks, args.k_stars, _seeds(args, config), args.sigmas)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = bench.run_cells(cells, config.to_dict(), args.workers)
    bench.attach_relative_errors(rows)
    keys = ("algorithm", "n", "d", "k", "k_star", "sigma")
    _write_grid(args, "bench-gaussian", bench.GAUSSIAN_COLUMNS, rows, keys,
                ("prw_value", "ratio", "rel_error", "w2_rel_error", "wall_ms"), config.to_dict())
    return _grid_exit(rows)


def cmd_bench_time(args) -> int:
    config = resolve_config(args)
    cells = bench.hypercube_grid(args.algo, args.ns, args.ds, args.ks, args.k_stars, _seeds(args, config),
                                 args.repeats, kind=args.instance)
    rows = bench.run_cells(cells, config.to_dict(), args.workers, reference=False)
    keys = ("algorithm", "n", "d", "k", "k_star")
    values = ("wall_ms", *(f"{p}_ms" for p in bench.PHASES), "iterations", "prw_value")
    _write_grid(args, "bench-time", bench.HYPERCUBE_COLUMNS, rows, keys, values, config.to_dict())
    return _grid_exit(rows)


def _solve_pair(job) -> dict:
    i, j, path_i, path_j, normalize, config, algorithm = job
    try:
        inst = load_instance(path_i, path_j, guess_format(path_i), normalize)
        res = solve(inst, SolverConfig.from_dict(config), algorithm)
    except Exception as exc:  # one bad pair must not sink the matrix
        return {"i": i, "j": j, "value": math.nan, "wall_ms": math.nan, "status": f"error: {exc}"}
    return {
        "i": i, "j": j, "value": res.prw_value, "wall_ms": 1e3 * res.wall_time,
        "status": "ok" if res.converged else "max_iter",
    }


def cmd_distmatrix(args) -> int:
    config = resolve_config(args)
    if not args.corpus.is_dir():
        raise UsageError(f"no such corpus directory: {args.corpus}")
    files = sorted(p for p in args.corpus.iterdir() if p.suffix.lower() in MEASURE_SUFFIXES)
    if len(files) < 2:
        raise UsageError(f"{args.corpus}: need at least two measure files, found {len(files)}")
    m = len(files)
    jobs = [(i, j, files[i], files[j], args.normalize, config.to_dict(), args.algo)
            for i in range(m) for j in range(i + 1, m)]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            pairs = list(pool.map(_solve_pair, jobs))
    else:
        pairs = [_solve_pair(job) for job in jobs]

    D = np.zeros((m, m))
    T = np.zeros((m, m))
    for rec in pairs:
        i, j = rec["i"], rec["j"]
        D[i, j] = D[j, i] = rec["value"]
        T[i, j] = T[j, i] = rec["wall_ms"]
        if rec["status"] != "ok":
            log.warning("pair (%s, %s): %s", files[i].name, files[j].name, rec["status"])

    names = [p.name for p in files]
    out_dir = _out_dir(args)
    if out_dir is not None:
        cols = ["name", *names]
        for fname, mat in (("prw_matrix", D), ("time_matrix", T)):
            rows = [{"name": names[a], **{names[b]: float(mat[a, b]) for b in range(m)}} for a in range(m)]
            bench.write_table(out_dir / f"{fname}.csv", fname, cols, rows, config.to_dict())
        pair_rows = [{**rec, "name_i": names[rec["i"]], "name_j": names[rec["j"]]} for rec in pairs]
        bench.write_table(out_dir / "pairs.csv", "distmatrix-pairs",
                          ("i", "j", "name_i", "name_j", "value", "wall_ms", "status"), pair_rows, config.to_dict())
    with np.printoptions(precision=6, suppress=True, linewidth=120):
        print(D)
    if any(r["status"].startswith("error") for r in pairs):
        return EXIT_USAGE
    return EXIT_OK if all(r["status"] == "ok" for r in pairs) else EXIT_NONCONVERGED


COMMANDS = {
    "compute": cmd_compute,
    "bench-hypercube": cmd_bench_hypercube,
    "bench-gaussian": cmd_bench_gaussian,
    "bench-time": cmd_bench_time,
    "distmatrix": cmd_distmatrix,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; 2 means non-convergence here
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "repeats", 1) < 1:
        print("error: --repeats must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except (UsageError, InstanceError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
