"""Wall-clock comparison of rbcd, rabcd, rgas and ragas over (n, d) pairs.

Uses eta = 0.2, tau = 0.001 for every solver (the ascent baselines step tau / eta),
eps1 = 0.1 and eps2 = eps1^2. Only orderings are meaningful across machines.

    python3 scripts/timing_table.py --pairs 100x20,100x50,500x50 --runs 10
"""
import argparse
from pathlib import Path

from prwbcd import bench

KEYS = ("algorithm", "n", "d")
CONFIG = dict(eta=0.2, tau=0.001, eps1=0.1, eps2=0.01)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--pairs", default="100x20,100x50,50x50,250x50")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--algo", default="rbcd,rabcd,rgas,ragas")
    p.add_argument("--out", type=Path, default=Path("results/timing"))
    args = p.parse_args()

    algos = args.algo.split(",")
    rows = []
    for pair in args.pairs.split(","):
        n, d = (int(x) for x in pair.split("x"))
        cells = bench.hypercube_grid(algos, [n], [d], [2], [2], range(args.runs))
        # timing runs stay serial so they do not compete for cores
        rows += bench.run_cells(cells, CONFIG, workers=1, reference=False)

    args.out.mkdir(parents=True, exist_ok=True)
    bench.write_table(args.out / "runs.csv", "timing", bench.HYPERCUBE_COLUMNS, rows, CONFIG)
    values = ["wall_ms", "iterations", "prw_value"]
    summary = bench.summarize(rows, KEYS, values)
    bench.write_table(args.out / "summary.csv", "timing-summary", bench.summary_columns(KEYS, values), summary, CONFIG)
    for rec in summary:
        print(f"n={rec['n']:<5d} d={rec['d']:<4d} {rec['algorithm']:6s} median {rec['wall_ms_median'] / 1e3:8.3f} s "
              f"({rec['iterations_median']:.0f} it, prw {rec['prw_value_mean']:.3f})")


if __name__ == "__main__":
    main()
