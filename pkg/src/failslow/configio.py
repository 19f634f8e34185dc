"""Config-file schemas and artifact serialization.

All configs are JSON. Writers emit canonical form (sorted keys, fixed
separators, trailing newline) so equal inputs always produce
byte-identical files; every report embeds the tool version, the run
manifest digest, and the seed.

Formats:

* arch config: mesh dims, distribution parameters, bandwidth, SRAM,
  probe clock, clock rate.
* workload config: either explicit ``tasks``/``deps``/``mapping`` blocks
  or a ``generator`` block (binary_tree / layered / bundle) plus a
  mapping rule. Round-trips bit-exactly.
* probe config: a preset name or a list of five-tuples.
* failure config: list of {location, start_s, duration_s, slowdown},
  location one of {"core": id}, {"link": [u, v]}, {"router": id}.
* trace CSV: header ``core,kind,key,start,end,payload,src,dst`` where
  key is ``ident:stage``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict
from pathlib import Path

from . import __version__
from . import bundles as bn
from . import workload as wl
from .errors import ConfigError
from .platform import ArchConfig, FailureSpec
from .probes import PRESETS, ProbeConfig, TraceEvent
from .sketch import PatternEntry, SketchConfig, SketchReport


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, separators=(",", ": ")) + "\n"


def write_json(path: Path, obj) -> None:
    Path(path).write_text(canonical_dumps(obj))


def read_json(path: Path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing config file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


# ---------------------------------------------------------------------------
# arch


def arch_to_dict(arch: ArchConfig) -> dict:
    return asdict(arch)


def arch_from_dict(data: dict) -> ArchConfig:
    try:
        return ArchConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"bad arch config: {exc}") from exc


def load_arch(path: Path) -> ArchConfig:
    return arch_from_dict(read_json(path))


# ---------------------------------------------------------------------------
# workload


def workload_to_dict(graph: wl.ComputeGraph, mapping: wl.Mapping | None = None) -> dict:
    out = {
        "tasks": [{"id": t.id, "stage": t.stage, "flops": t.flops, "kind": t.kind}
                  for t in graph.tasks],
        "deps": [[src, dst, vol] for src, dst, vol in graph.deps],
    }
    if mapping is not None:
        out["mapping"] = {str(tid): core for tid, core in sorted(mapping.assignment.items())}
    return out


def workload_from_dict(data: dict, arch: ArchConfig
                       ) -> tuple[wl.ComputeGraph, wl.Mapping]:
    if "generator" in data:
        gen = data["generator"]
        kind = gen.get("kind")
        if kind == "bundle":
            bundle = bn.get_bundle(gen["name"])
            return bundle.build(arch)
        if kind == "binary_tree":
            graph = wl.gen_binary_tree(gen["depth"], gen.get("flops", 1024),
                                       gen.get("volume", 256))
        elif kind == "layered":
            graph = wl.gen_layered(gen["layers"], gen["width"],
                                   fan_in=gen.get("fan_in", 1),
                                   flops_per_task=gen.get("flops", 1024),
                                   volume_per_edge=gen.get("volume", 256))
        else:
            raise ConfigError(f"unknown generator kind {kind!r}")
        shift = gen.get("stage_shift", 1)
        mapping = wl.round_robin_mapping(graph, arch.n_cores, stage_shift=shift)
        return graph, mapping
    try:
        tasks = [wl.Task(id=t["id"], stage=t["stage"], flops=t["flops"],
                         kind=t.get("kind", wl.COMP)) for t in data["tasks"]]
        deps = [tuple(d) for d in data["deps"]]
        graph = wl.ComputeGraph(tasks=tasks, deps=deps)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad workload config: {exc}") from exc
    if "mapping" in data:
        mapping = wl.Mapping({int(k): v for k, v in data["mapping"].items()})
    else:
        mapping = wl.round_robin_mapping(graph, arch.n_cores)
    mapping.validate(graph, arch.n_cores)
    return graph, mapping


def load_workload(path: Path, arch: ArchConfig) -> tuple[wl.ComputeGraph, wl.Mapping]:
    return workload_from_dict(read_json(path), arch)


# ---------------------------------------------------------------------------
# probes


def probe_plan_from_dict(data) -> list[ProbeConfig]:
    if isinstance(data, str):
        if data not in PRESETS:
            raise ConfigError(f"unknown probe preset {data!r}; have {sorted(PRESETS)}")
        return PRESETS[data]()
    if isinstance(data, dict):
        data = data.get("probes", [])
    try:
        return [ProbeConfig(fragment=p["fragment"], type=p["type"],
                            location=p["location"], level=p.get("level", "inst"),
                            structure=p.get("structure", "list"))
                for p in data]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad probe config: {exc}") from exc


def probe_plan_to_dict(configs: list[ProbeConfig]) -> dict:
    return {"probes": [asdict(c) for c in configs]}


def load_probe_plan(path: Path) -> list[ProbeConfig]:
    return probe_plan_from_dict(read_json(path))


# ---------------------------------------------------------------------------
# failures


def failure_to_dict(spec: FailureSpec) -> dict:
    kind, target = spec.location
    loc = {kind: list(target) if isinstance(target, tuple) else target}
    return {"location": loc, "start_s": spec.start_s,
            "duration_s": spec.duration_s, "slowdown": spec.slowdown}


def failure_from_dict(data: dict) -> FailureSpec:
    try:
        loc = data["location"]
        if len(loc) != 1:
            raise ConfigError(f"failure location must have one key, got {sorted(loc)}")
        kind, target = next(iter(loc.items()))
        if kind == "link":
            target = tuple(target)
        return FailureSpec(location=(kind, target), start_s=data["start_s"],
                           duration_s=data["duration_s"], slowdown=data["slowdown"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad failure spec: {exc}") from exc


def load_failures(path: Path) -> list[FailureSpec]:
    data = read_json(path)
    if isinstance(data, dict):
        data = data.get("failures", [])
    return [failure_from_dict(d) for d in data]


# ---------------------------------------------------------------------------
# sketch config


def sketch_config_from_dict(data: dict) -> SketchConfig:
    try:
        return SketchConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"bad sketch config: {exc}") from exc


# ---------------------------------------------------------------------------
# trace CSV

TRACE_HEADER = ["core", "kind", "key", "start", "end", "payload", "src", "dst"]


def trace_to_csv(events: list[TraceEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for ev in events:
        writer.writerow([ev.core, ev.kind, f"{ev.ident}:{ev.stage}",
                         repr(ev.start), repr(ev.end), ev.payload, ev.src, ev.dst])
    return buf.getvalue()


def trace_from_csv(text: str) -> list[TraceEvent]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != TRACE_HEADER:
        raise ConfigError(f"bad trace header: {header}")
    events = []
    try:
        for row in reader:
            if not row:
                continue
            ident, stage = row[2].split(":")
            events.append(TraceEvent(core=int(row[0]), kind=row[1], ident=int(ident),
                                     stage=int(stage), start=float(row[3]),
                                     end=float(row[4]), payload=int(row[5]),
                                     src=int(row[6]), dst=int(row[7])))
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"corrupt trace row: {exc}") from exc
    return events


def write_trace(path: Path, events: list[TraceEvent]) -> None:
    Path(path).write_text(trace_to_csv(events))


def read_trace(path: Path) -> list[TraceEvent]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing trace file: {path}")
    return trace_from_csv(path.read_text())


# ---------------------------------------------------------------------------
# pattern list


def entry_to_dict(e: PatternEntry) -> dict:
    return {"key": list(e.key), "freq": e.freq, "kind": e.kind, "core": e.core,
            "src": e.src, "dst": e.dst, "volume": e.volume, "flops": e.flops,
            "first_seen": e.first_seen, "last_end": e.last_end,
            "lat_count": e.lat_count, "lat_mean": e.lat_mean, "lat_m2": e.lat_m2,
            "promoted_at": e.promoted_at}


def entry_from_dict(d: dict) -> PatternEntry:
    key = tuple(d["key"])
    return PatternEntry(key=key, freq=d["freq"], kind=d["kind"], core=d["core"],
                        src=d["src"], dst=d["dst"], volume=d["volume"],
                        flops=d["flops"], first_seen=d["first_seen"],
                        last_end=d["last_end"], lat_count=d["lat_count"],
                        lat_mean=d["lat_mean"], lat_m2=d["lat_m2"],
                        promoted_at=d["promoted_at"])


def pattern_report_to_dict(report: SketchReport) -> dict:
    return {
        "config": asdict(report.config),
        "entries": [entry_to_dict(e) for e in report.entries],
        "metrics": {"raw_bytes": report.raw_bytes,
                    "compressed_bytes": report.compressed_bytes,
                    "ratio": report.ratio, "degenerate": report.degenerate},
    }


def pattern_report_entries(data: dict) -> list[PatternEntry]:
    return [entry_from_dict(d) for d in data.get("entries", [])]


# ---------------------------------------------------------------------------
# manifest


def manifest_digest(manifest: dict, base_dir: Path) -> str:
    """Digest over the manifest body plus every referenced config file."""
    h = hashlib.sha256()
    h.update(canonical_dumps(manifest).encode())
    for key in sorted(manifest):
        if not key.endswith("_config"):
            continue
        ref = Path(manifest[key])
        if not ref.is_absolute():
            ref = Path(base_dir) / ref
        if ref.exists():
            h.update(ref.read_bytes())
    return h.hexdigest()


def stamp(manifest_dig: str, seed: int) -> dict:
    return {"tool_version": __version__, "manifest_digest": manifest_dig, "seed": seed}
