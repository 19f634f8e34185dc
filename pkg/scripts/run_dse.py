#!/usr/bin/env python3
"""Design-space exploration over sketch parameters.

Sweeps (tables, buckets, threshold, max_length), scoring each point by
COST = ACC^a * R^b * M^c with R the compressed fraction and M the
structure footprint, and prints the Pareto frontier and the cost
optimum. Simulations run once per dataset case; every grid point only
re-sketches the cached traces.
"""

import argparse

from failslow import bundles as bn
from failslow.evaluation import DEFAULT_GRID, dse


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--bundle", default="binary_tree", choices=sorted(bn.BUNDLES))
    parser.add_argument("--acc-count", type=int, default=10)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--full-grid", action="store_true",
                        help="all 192 default points instead of the coarse sweep")
    args = parser.parse_args()

    if args.full_grid:
        grid = DEFAULT_GRID
    else:
        grid = {"tables": (1, 3), "buckets": (128, 512), "threshold": (5, 10, 40),
                "max_length": (2048, 8192, 32768)}
    report = dse(bn.BUNDLES[args.bundle], bn.DEFAULT_ARCH, grid=grid,
                 acc_count=args.acc_count, seed=args.seed)
    print(f"{'d':>2} {'m':>5} {'H':>3} {'S':>6} {'acc':>5} {'ratio':>7} "
          f"{'mem_KiB':>8} {'cost':>10} pareto")
    pareto = set(report.pareto)
    for i, p in enumerate(report.points):
        mark = "*" if i in pareto else ""
        print(f"{p.tables:>2} {p.buckets:>5} {p.threshold:>3} {p.max_length:>6} "
              f"{p.acc:>5.2f} {p.ratio:>6.1f}x {p.structure_bytes / 1024:>7.1f} "
              f"{p.cost:>10.4g} {mark}")
    b = report.best
    print(f"\nbest: d={b.tables} m={b.buckets} H={b.threshold} S={b.max_length} "
          f"(cost {b.cost:.4g}, acc {b.acc:.2f}, ratio {b.ratio:.1f}x)")


if __name__ == "__main__":
    main()
