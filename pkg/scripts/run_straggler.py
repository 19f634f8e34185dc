#!/usr/bin/env python3
"""Measure how a single persistent fail-slow failure amplifies total
execution time, per failed component class (core, router, link).

Runs the reference layered workload on the default 4x4 mesh with a 10x
slowdown injected at a busy core, at that core's router, and at one of
its links, and prints the slowdown factor of each run against the
failure-free baseline.
"""

import argparse

from failslow import bundles as bn
from failslow.platform import FailureSpec, Platform


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--bundle", default=bn.LAYERED_REFERENCE,
                        choices=sorted(bn.BUNDLES))
    parser.add_argument("--core", type=int, default=6)
    parser.add_argument("--slowdown", type=float, default=10.0)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    arch = bn.DEFAULT_ARCH
    bundle = bn.BUNDLES[args.bundle]
    probed = bn.program_cached(bundle, arch, plan="full")
    base = Platform(arch, seed=args.seed).run(probed).total_cycles
    print(f"{args.bundle} baseline: {base:.0f} cycles "
          f"({arch.cycles_to_seconds(base) * 1e3:.2f} ms)")

    west = args.core - 1 if args.core % arch.mesh_width else args.core + 1
    for label, location in (
        ("core", ("core", args.core)),
        ("router", ("router", args.core)),
        ("link", ("link", (west, args.core))),
    ):
        spec = FailureSpec(location=location, start_s=0.0, duration_s=10.0,
                           slowdown=args.slowdown)
        total = Platform(arch, [spec], seed=args.seed).run(probed).total_cycles
        print(f"  {label:<7} {location[1]}: {total / base:.2f}x")


if __name__ == "__main__":
    main()
