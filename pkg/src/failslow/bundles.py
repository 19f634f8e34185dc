"""Bundled experiment workloads and the reference architecture.

Five workloads cover the structural range the detector faces: a
binary-tree reduction with locality mapping (sparse, root-heavy
communication), three layered graphs whose stage-shift schedules rotate
transfers through all four mesh directions, and a uniformly mapped
layered graph whose aligned chains produce highly correlated traces,
the hardest case for link inference.

Structural mutations (used to build failure-free negative samples)
perturb one generator parameter at a time: plus or minus one layer or
one width unit for layered graphs, one level less for trees.

Builders are cached: evaluation re-runs the same lowered program for
every injected failure, so graphs, programs, and communication graphs
are built once per (bundle, mutation, arch) key.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import workload as wl
from .errors import ConfigError
from .platform import ArchConfig
from .probes import ProbedProgram, instrument


# Link jitter is heavy-tailed (shape well below 1): the mean stays under
# 3% of a transfer's service time, but rare arbitration-style stalls of
# hundreds of cycles do occur, which is what separates statistical
# detection from single-event thresholding.
DEFAULT_ARCH = ArchConfig(
    mesh_width=4, mesh_height=4,
    core_mu=64.0, core_sigma=1.28,
    link_bandwidth=64.0, link_shape=0.01, link_rate=0.003125,
    sram_bytes=65536, probe_clock_cycles=10, clock_hz=1e9,
)


def arch_for_mesh(width: int, height: int | None = None) -> ArchConfig:
    from dataclasses import replace

    return replace(DEFAULT_ARCH, mesh_width=width, mesh_height=height or width)


@dataclass(frozen=True)
class WorkloadBundle:
    """One named workload family: generator parameters plus mapping style."""

    name: str
    kind: str                 # "tree" or "layered"
    layers: int = 0
    width: int = 0
    fan_in: int = 2
    depth: int = 0
    flops: int = 32768
    volume: int = 4096
    shift_style: str = "cycle"  # "cycle": rotate all four directions; "fixed": +1

    def mutated(self, mutation: int) -> "WorkloadBundle":
        """Structural variant #mutation (for negative samples)."""
        from dataclasses import replace

        if self.kind == "tree":
            return replace(self, depth=max(2, self.depth - 1),
                           flops=self.flops + 1024 * (mutation % 2))
        which = mutation % 4
        if which == 0:
            return replace(self, layers=self.layers + 1)
        if which == 1:
            return replace(self, layers=max(2, self.layers - 1))
        if which == 2:
            return replace(self, width=self.width + 1)
        return replace(self, width=max(self.fan_in, self.width - 1))

    def build(self, arch: ArchConfig) -> tuple[wl.ComputeGraph, wl.Mapping]:
        if self.kind == "tree":
            graph = wl.gen_binary_tree(self.depth, flops_per_node=self.flops,
                                       volume_per_edge=self.volume)
        else:
            graph = wl.gen_layered(self.layers, self.width, fan_in=self.fan_in,
                                   flops_per_task=self.flops,
                                   volume_per_edge=self.volume)
        if self.shift_style == "fixed":
            mapping = wl.round_robin_mapping(graph, arch.n_cores, stage_shift=1)
        else:
            # Rotate transfers through all four mesh directions so every
            # link is covered by single-hop paths, keeping the link
            # system identifiable even under congestion.
            schedule = [0, 1, 0, arch.mesh_width]
            mapping = wl.round_robin_mapping(graph, arch.n_cores, stage_shift=schedule)
        return graph, mapping


BUNDLES: dict[str, WorkloadBundle] = {
    "binary_tree": WorkloadBundle(name="binary_tree", kind="tree", depth=17),
    "layered_wide": WorkloadBundle(name="layered_wide", kind="layered",
                                   layers=4, width=8192, flops=49152),
    "layered_deep": WorkloadBundle(name="layered_deep", kind="layered",
                                   layers=12, width=3072, flops=49152, volume=6144),
    "layered_blocky": WorkloadBundle(name="layered_blocky", kind="layered",
                                     layers=8, width=4096, flops=49152),
    "layered_uniform": WorkloadBundle(name="layered_uniform", kind="layered",
                                      layers=10, width=3456, flops=49152,
                                      shift_style="fixed"),
}

LAYERED_REFERENCE = "layered_deep"  # the layered workload used in timing studies
# scalability studies use workloads whose stage-shift schedule adapts to the
# mesh width; the fixed-shift uniform mapping is a 4x4-specific hard case
SCALABILITY_BUNDLES = ("layered_deep", "layered_blocky")


def get_bundle(name: str) -> WorkloadBundle:
    try:
        return BUNDLES[name]
    except KeyError:
        raise ConfigError(f"unknown bundle {name!r}; have {sorted(BUNDLES)}") from None


_build_cache: dict = {}


def build_cached(bundle: WorkloadBundle, arch: ArchConfig, mutation: int | None = None,
                 ) -> tuple[wl.ComputeGraph, wl.Mapping]:
    spec = bundle if mutation is None else bundle.mutated(mutation)
    key = ("graph", spec, arch)
    hit = _build_cache.get(key)
    if hit is None:
        hit = _build_cache[key] = spec.build(arch)
    return hit


def program_cached(bundle: WorkloadBundle, arch: ArchConfig, mutation: int | None = None,
                   plan: str = "full") -> ProbedProgram:
    spec = bundle if mutation is None else bundle.mutated(mutation)
    key = ("prog", spec, arch, plan)
    hit = _build_cache.get(key)
    if hit is None:
        from .probes import PRESETS

        graph, mapping = build_cached(bundle, arch, mutation)
        program = wl.lower(graph, mapping, arch.n_cores)
        hit = _build_cache[key] = instrument(program, PRESETS[plan]())
    return hit


def mcg_cached(bundle: WorkloadBundle, arch: ArchConfig, mutation: int | None = None,
               n_levels: int = 4):
    from .tracer import build_mcg

    spec = bundle if mutation is None else bundle.mutated(mutation)
    key = ("mcg", spec, arch, n_levels)
    hit = _build_cache.get(key)
    if hit is None:
        graph, mapping = build_cached(bundle, arch, mutation)
        hit = _build_cache[key] = build_mcg(graph, mapping, arch, n_levels=n_levels)
    return hit


def clear_cache() -> None:
    _build_cache.clear()
