"""Probe instrumentation: five-tuple probe configs, trace events, and
the emission stage that routes recorded events into a raw log or into
per-core pattern sketches.

A probe is described by five fields: what to record (fragment), which
instructions to match (type), where to anchor relative to the matched
instruction (location), the aggregation granularity (level), and the
storage organization (structure). Fragments pair with exactly one
instruction type: exec probes compute, route probes communication, mem
probes io. Probes read timestamps and never write workload state, so
with a zero-cost clock read a probed run is cycle-identical to an
unprobed one.

Communication is probed at its send instruction: a surround pair costs
one clock read on the source core at send issue and one on the
destination core at delivery, and the recorded event spans issue to
delivery. The matching receive is a pairing marker, not a separately
probed instruction, so one communication yields one trace event.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import ConfigError
from . import workload as wl

FRAGMENTS = ("exec", "route", "mem")
TYPES = (wl.COMP, wl.COMM, wl.IO)
LOCATIONS = ("pre", "post", "surround")
LEVELS = ("inst", "stage")
STRUCTURES = ("list", "sketch")

_COMPAT = {"exec": wl.COMP, "route": wl.COMM, "mem": wl.IO}

EVENT_BYTES = 32  # raw record: key 8, timestamps 16, payload 4, core 4


@dataclass(frozen=True)
class ProbeConfig:
    """One probe five-tuple; all fields required and validated."""

    fragment: str
    type: str
    location: str
    level: str = "inst"
    structure: str = "list"

    def __post_init__(self):
        if self.fragment not in FRAGMENTS:
            raise ConfigError(f"unknown fragment {self.fragment!r}")
        if self.type not in TYPES:
            raise ConfigError(f"unknown type {self.type!r}")
        if self.location not in LOCATIONS:
            raise ConfigError(f"unknown location {self.location!r}")
        if self.level not in LEVELS:
            raise ConfigError(f"unknown level {self.level!r}")
        if self.structure not in STRUCTURES:
            raise ConfigError(f"unknown structure {self.structure!r}")
        if _COMPAT[self.fragment] != self.type:
            raise ConfigError(
                f"fragment {self.fragment!r} is incompatible with type {self.type!r}; "
                f"expected {_COMPAT[self.fragment]!r}")


def full_probe(level: str = "inst", structure: str = "sketch") -> list[ProbeConfig]:
    """Probe every compute and communication instruction."""
    return [
        ProbeConfig("exec", wl.COMP, "post", level, structure),
        ProbeConfig("route", wl.COMM, "surround", level, structure),
    ]


def comm_probe(level: str = "inst", structure: str = "sketch") -> list[ProbeConfig]:
    return [ProbeConfig("route", wl.COMM, "surround", level, structure)]


def comp_probe(level: str = "inst", structure: str = "sketch") -> list[ProbeConfig]:
    return [ProbeConfig("exec", wl.COMP, "post", level, structure)]


PRESETS = {
    "full": full_probe,
    "comm": comm_probe,
    "comp": comp_probe,
    "none": lambda level="inst", structure="list": [],
}


def probe_cost(config: ProbeConfig, probe_clock_cycles: int) -> int:
    """Cycles charged per probed instruction: one clock read for pre or
    post, two for surround."""
    return probe_clock_cycles * (2 if config.location == "surround" else 1)


@dataclass(slots=True)
class TraceEvent:
    """One probed observation.

    ``ident`` is the task id for comp/io events and the dep id for comm
    events; ``payload`` is flops (comp) or bytes (comm/io). ``core`` is
    the owning core: the executing core for comp/io, the source core for
    comm. Comm events also carry the (src, dst) endpoint pair.
    """

    core: int
    kind: str
    ident: int
    stage: int
    start: float
    end: float
    payload: int
    src: int = -1
    dst: int = -1

    @property
    def key(self) -> tuple:
        return (self.ident, self.stage, self.kind, (self.src, self.dst))

    @property
    def duration(self) -> float:
        return self.end - self.start


def pattern_key(ev: TraceEvent) -> tuple:
    """Pattern feature of an event: what repeats across instances.

    Comp and io patterns group by (core, stage); comm patterns group by
    endpoint pair. Instance identity (task/dep id, timestamps) is the
    part the sketch aggregates away.
    """
    if ev.kind == wl.COMM:
        return (wl.COMM, ev.src, ev.dst)
    return (ev.kind, ev.core, ev.stage)


@dataclass
class ProbedProgram:
    """Instruction streams plus probe placement.

    ``costs[core][i]`` is ``(pre, post, record)`` for instruction i:
    whether a clock read is charged before/after it and whether it emits
    a trace event. ``sites`` lists the inserted probes for inspection.
    """

    instructions: dict[int, list[wl.Instruction]]
    costs: dict[int, list[tuple[int, int, int]]]
    sites: list[tuple[int, int, str, str]]  # (core, index, type, location)
    configs: tuple[ProbeConfig, ...]
    level: str = "inst"
    structure: str = "list"
    compiled: dict | None = None  # opcode tuples, built lazily by the simulator

    @property
    def track_sram(self) -> bool:
        return self.structure == "list" and self.level == "inst"

    @property
    def probe_count(self) -> int:
        return len(self.sites)


def instrument(program: dict[int, list[wl.Instruction]],
               configs: Iterable[ProbeConfig]) -> ProbedProgram:
    """Insert probes at every instruction matching a config's type.

    Communication is matched at the send; surround places the pre read
    at send issue (source core) and the post read at delivery
    (destination core). Raises on duplicate types in one plan or on
    mixed level/structure settings.
    """
    configs = tuple(configs)
    by_type: dict[str, ProbeConfig] = {}
    for cfg in configs:
        if cfg.type in by_type:
            raise ConfigError(f"duplicate probe config for type {cfg.type!r}")
        by_type[cfg.type] = cfg
    levels = {c.level for c in configs}
    structures = {c.structure for c in configs}
    if len(levels) > 1 or len(structures) > 1:
        raise ConfigError("probe configs in one plan must share level and structure")
    level = levels.pop() if levels else "inst"
    structure = structures.pop() if structures else "list"

    costs: dict[int, list[tuple[int, int, int]]] = {}
    sites: list[tuple[int, int, str, str]] = []
    for core in sorted(program):
        core_costs = []
        for ins in program[core]:
            cfg = by_type.get(ins.kind)
            if cfg is None:
                core_costs.append((0, 0, 0))
                continue
            pre = 1 if cfg.location in ("pre", "surround") else 0
            post = 1 if cfg.location in ("post", "surround") else 0
            if ins.kind == wl.COMM:
                if ins.role == wl.SEND:
                    core_costs.append((pre, 0, 1))
                    sites.append((core, ins.index, ins.kind, cfg.location))
                else:
                    # delivery-side clock read rides on the receive marker
                    core_costs.append((0, post, 0))
            else:
                core_costs.append((pre, post, 1))
                sites.append((core, ins.index, ins.kind, cfg.location))
        costs[core] = core_costs
    return ProbedProgram(instructions=dict(program), costs=costs, sites=sites,
                         configs=configs, level=level, structure=structure)


@dataclass
class RawTraceLog:
    """Uncompressed trace: ordered events plus byte accounting.

    Events are sorted per core by non-decreasing end cycle. ``raw_bytes``
    is the size of the uncompressed form under the fixed 32-byte record
    model, independent of how the trace was actually stored.
    """

    events: list[TraceEvent] = field(default_factory=list)
    raw_bytes: int = 0
    offload_count: int = 0

    @property
    def n_events(self) -> int:
        return len(self.events)


def aggregate_stage(events: list[TraceEvent]) -> list[TraceEvent]:
    """Merge events per (core, stage, kind): payloads sum, spans widen."""
    merged: dict[tuple, list] = {}
    for ev in events:
        k = (ev.core, ev.stage, ev.kind)
        slot = merged.get(k)
        if slot is None:
            merged[k] = [ev.start, ev.end, ev.payload, ev.ident]
        else:
            if ev.start < slot[0]:
                slot[0] = ev.start
            if ev.end > slot[1]:
                slot[1] = ev.end
            slot[2] += ev.payload
    out = []
    for (core, stage, kind), (start, end, payload, ident) in sorted(merged.items()):
        out.append(TraceEvent(core=core, kind=kind, ident=ident, stage=stage,
                              start=start, end=end, payload=payload))
    return out


@dataclass
class EmitResult:
    raw_log: RawTraceLog
    sketches: dict[int, "FailSlowSketch"] | None
    raw_bytes: int


def emit(events: list[TraceEvent], probed: ProbedProgram,
         sketch_config=None, offload_count: int = 0) -> EmitResult:
    """Route a completed run's events per the plan's level and structure.

    List keeps every (possibly stage-aggregated) event in the raw log;
    sketch streams them into one sketch per owning core and leaves the
    raw log empty. ``raw_bytes`` always accounts the uncompressed form.
    """
    from .sketch import FailSlowSketch, SketchConfig

    if probed.level == "stage":
        events = aggregate_stage(events)
    raw_bytes = EVENT_BYTES * len(events)
    if probed.structure == "sketch":
        config = sketch_config if sketch_config is not None else SketchConfig()
        sketches: dict[int, FailSlowSketch] = {}
        for ev in events:
            sk = sketches.get(ev.core)
            if sk is None:
                sk = sketches[ev.core] = FailSlowSketch(config)
            sk.insert_event(ev)
        return EmitResult(raw_log=RawTraceLog(events=[], raw_bytes=raw_bytes,
                                              offload_count=offload_count),
                          sketches=sketches, raw_bytes=raw_bytes)
    log = RawTraceLog(events=list(events), raw_bytes=raw_bytes, offload_count=offload_count)
    return EmitResult(raw_log=log, sketches=None, raw_bytes=raw_bytes)
