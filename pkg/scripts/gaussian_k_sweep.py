"""Ratio P_k^2 / W^2 against k for low-rank Gaussian clouds, clean and noisy.

Without noise the ratio should reach 1 once k >= 2 k*.

    python3 scripts/gaussian_k_sweep.py --samples 20 --sigma 0,1
"""
import argparse
from pathlib import Path

from prwbcd import bench

KEYS = ("algorithm", "sigma", "k")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--k-star", type=int, default=5)
    p.add_argument("--k-max", type=int, default=20)
    p.add_argument("--sigma", default="0,1", help="noise levels; 0 is the clean cloud")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--algo", default="rbcd")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/gaussian_k_sweep"))
    args = p.parse_args()

    config = dict(eta=1.0, tau=0.005, eps1=0.1, eps2=0.1)
    sigmas = [float(s) for s in args.sigma.split(",")]
    ks = range(1, min(args.k_max, args.d) + 1)
    cells = [c for c in bench.gaussian_grid(args.algo.split(","), [args.n], [args.d], ks, [args.k_star],
                                            range(args.samples), sigmas)
             if c.sigma in sigmas]
    rows = bench.run_cells(cells, config, workers=args.workers)

    args.out.mkdir(parents=True, exist_ok=True)
    bench.write_table(args.out / "runs.csv", "gaussian-k-sweep", bench.GAUSSIAN_COLUMNS, rows, config)
    summary = bench.summarize(rows, KEYS, ["ratio"])
    bench.write_table(args.out / "summary.csv", "gaussian-k-sweep-summary",
                      bench.summary_columns(KEYS, ["ratio"]), summary, config)
    for rec in summary:
        print(f"{rec['algorithm']:6s} sigma={rec['sigma']:<5g} k={rec['k']:<3d} ratio={rec.get('ratio_mean', float('nan')):.4f}")


if __name__ == "__main__":
    main()
