#!/usr/bin/env python3
"""Closed-loop detection evaluation over the bundled workloads.

Generates a seeded failure dataset per workload, runs every instance
plus an equal number of failure-free negatives, and prints an accuracy /
false-positive table for the ranking detector and the
threshold-filtering baseline.
"""

import argparse
import time

from failslow import bundles as bn
from failslow.evaluation import evaluate, gen_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=104, help="instances per workload")
    parser.add_argument("--seed", type=int, default=20240701)
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--bundles", nargs="*", default=sorted(bn.BUNDLES))
    args = parser.parse_args()

    arch = bn.DEFAULT_ARCH
    print(f"{'workload':<18} {'detector':<10} {'accuracy':<20} {'fpr':<18} {'ratio':>7}")
    for name in args.bundles:
        bundle = bn.BUNDLES[name]
        t0 = time.perf_counter()
        ds = gen_dataset(bundle, arch, count=args.count, seed=args.seed)
        rep = evaluate(ds, bundle, arch, workers=args.workers)
        elapsed = time.perf_counter() - t0
        for det, m in sorted(rep.metrics.items()):
            print(f"{name:<18} {det:<10} {m.accuracy_str:<20} {m.fpr_str:<18} "
                  f"{rep.mean_ratio:>6.1f}x")
        print(f"{'':<18} ({len(ds.instances)} instances, {ds.dropped} dropped, "
              f"{elapsed:.0f}s)")
        bn.clear_cache()


if __name__ == "__main__":
    main()
