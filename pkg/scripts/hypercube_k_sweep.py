"""PRW value against the projection dimension k on fragmented hypercubes.

For each k* the value should sit near 4 k* at k = k* and grow slowly after.

    python3 scripts/hypercube_k_sweep.py --k-star 2,4 --k-max 12 --samples 20
"""
import argparse
from pathlib import Path

from prwbcd import bench

KEYS = ("algorithm", "k_star", "k")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k-star", default="2,4,7,10")
    p.add_argument("--k-max", type=int, default=None, help="largest k (default: max k* + 5, capped at d)")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=30)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--algo", default="rbcd,rgas")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/hypercube_k_sweep"))
    args = p.parse_args()

    k_stars = [int(s) for s in args.k_star.split(",")]
    k_max = min(args.d, args.k_max or max(k_stars) + 5)
    config = dict(eta=0.2, tau=0.005, eps1=0.1, eps2=0.1)
    cells = bench.hypercube_grid(args.algo.split(","), [args.n], [args.d], range(1, k_max + 1), k_stars, range(args.samples))
    rows = bench.run_cells(cells, config, workers=args.workers)

    args.out.mkdir(parents=True, exist_ok=True)
    bench.write_table(args.out / "runs.csv", "hypercube-k-sweep", bench.HYPERCUBE_COLUMNS, rows, config)
    summary = bench.summarize(rows, KEYS, ["prw_value"])
    bench.write_table(args.out / "summary.csv", "hypercube-k-sweep-summary",
                      bench.summary_columns(KEYS, ["prw_value"]), summary, config)
    for rec in summary:
        print(f"{rec['algorithm']:6s} k*={rec['k_star']:<3d} k={rec['k']:<3d} mean={rec.get('prw_value_mean', float('nan')):.3f}")


if __name__ == "__main__":
    main()
