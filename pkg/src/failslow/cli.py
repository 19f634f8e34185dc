"""Command-line entry point.

Subcommands: simulate, detect, dataset, eval, dse, report. Experiment
knobs live in config files referenced by a run manifest; the only flags
are the manifest path, the seed, and the output directory, so re-running
a command with the same manifest reproduces byte-identical artifacts.

Exit codes: 0 success, 2 configuration error, 3 detection-pipeline
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bundles as bn
from . import configio as cio
from . import workload as wl
from .errors import ConfigError, DeadlockError, PipelineError
from .evaluation import DEFAULT_GRID, dse, evaluate, gen_dataset
from .platform import Platform
from .probes import PRESETS, emit, instrument
from .sketch import SketchConfig, make_report
from .tracer import (DetectorConfig, FailRankConfig, Observations, detect_failslow)


def _load_manifest(path: str) -> tuple[dict, Path, str]:
    manifest_path = Path(path)
    manifest = cio.read_json(manifest_path)
    if not isinstance(manifest, dict):
        raise ConfigError(f"{path}: manifest must be a JSON object")
    base = manifest_path.parent
    digest = cio.manifest_digest(manifest, base)
    return manifest, base, digest


def _resolve(base: Path, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else base / p


def _load_common(manifest: dict, base: Path, seed_flag: int | None):
    if "arch_config" in manifest:
        arch = cio.load_arch(_resolve(base, manifest["arch_config"]))
    else:
        arch = bn.DEFAULT_ARCH
    seed = seed_flag if seed_flag is not None else int(manifest.get("seed", 0))
    return arch, seed


def _load_graph_mapping(manifest: dict, base: Path, arch):
    if "workload_bundle" in manifest:
        bundle = bn.get_bundle(manifest["workload_bundle"])
        return bundle.build(arch)
    if "workload_config" not in manifest:
        raise ConfigError("manifest needs workload_config or workload_bundle")
    return cio.load_workload(_resolve(base, manifest["workload_config"]), arch)


def _load_plan(manifest: dict, base: Path):
    ref = manifest.get("probe_config")
    if ref is None:
        return PRESETS["full"]()
    if isinstance(ref, str) and ref in PRESETS:
        return PRESETS[ref]()
    return cio.load_probe_plan(_resolve(base, ref))


def _load_sketch_config(manifest: dict) -> SketchConfig:
    data = manifest.get("sketch_config")
    return cio.sketch_config_from_dict(data) if data else SketchConfig()


def _load_detector_config(manifest: dict) -> DetectorConfig:
    data = dict(manifest.get("detector_config", {}))
    fr = FailRankConfig(**data.pop("failrank", {}))
    try:
        return DetectorConfig(**data, failrank=fr)
    except TypeError as exc:
        raise ConfigError(f"bad detector config: {exc}") from exc


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    manifest, base, digest = _load_manifest(args.manifest)
    arch, seed = _load_common(manifest, base, args.seed)
    graph, mapping = _load_graph_mapping(manifest, base, arch)
    plan = _load_plan(manifest, base)
    failures = []
    if "failure_config" in manifest:
        failures = cio.load_failures(_resolve(base, manifest["failure_config"]))
    out = _outdir(args)

    program = wl.lower(graph, mapping, arch.n_cores)
    probed = instrument(program, plan)
    run = Platform(arch, failures, seed=seed).run(probed)
    baseline = Platform(arch, failures, seed=seed).run(instrument(program, []))
    emitted = emit(run.events, probed, sketch_config=_load_sketch_config(manifest))

    stamp = cio.stamp(digest, seed)
    if emitted.sketches is not None:
        report = make_report(list(emitted.sketches.values()), emitted.raw_bytes)
        cio.write_json(out / "patterns.json",
                       {**cio.pattern_report_to_dict(report), **stamp})
    else:
        cio.write_trace(out / "trace.csv", emitted.raw_log.events)
    overhead = run.total_cycles / baseline.total_cycles - 1.0 if baseline.total_cycles else 0.0
    cio.write_json(out / "timing.json", {
        **stamp,
        "total_cycles": run.total_cycles,
        "unprobed_cycles": baseline.total_cycles,
        "probe_overhead": overhead,
        "probe_cycles": run.probe_cycles,
        "n_instructions": run.n_instructions,
        "n_events": len(run.events),
        "raw_trace_bytes": emitted.raw_bytes,
        "offload_count": emitted.raw_log.offload_count,
    })
    print(f"simulate: {run.n_instructions} instructions, {run.total_cycles:.0f} cycles, "
          f"probe overhead {100 * overhead:.2f}%, artifacts in {out}")
    return 0


def cmd_detect(args) -> int:
    manifest, base, digest = _load_manifest(args.manifest)
    arch, seed = _load_common(manifest, base, args.seed)
    graph, mapping = _load_graph_mapping(manifest, base, arch)
    out = _outdir(args)
    artifacts = Path(args.artifacts) if args.artifacts else out

    patterns = artifacts / "patterns.json"
    trace = artifacts / "trace.csv"
    if patterns.exists():
        entries = cio.pattern_report_entries(cio.read_json(patterns))
        obs = Observations.from_entries(entries)
    elif trace.exists():
        obs = Observations.from_events(cio.read_trace(trace))
    else:
        raise PipelineError(f"no patterns.json or trace.csv under {artifacts}")

    report = detect_failslow(obs, graph, mapping, arch,
                             config=_load_detector_config(manifest))
    cio.write_json(out / "ranking.json",
                   {**report.to_dict(), **cio.stamp(digest, seed)})
    top = report.top
    line = f"{top.type} {top.ident} (score {top.score:.4f})" if top else "none"
    print(f"detect: {len(report.candidates)} candidates; top: {line}")
    return 0


def cmd_dataset(args) -> int:
    manifest, base, digest = _load_manifest(args.manifest)
    arch, seed = _load_common(manifest, base, args.seed)
    opts = manifest.get("dataset", {})
    count = int(args.count or opts.get("count", 104))
    bundle = bn.get_bundle(manifest.get("workload_bundle", "layered_deep"))
    out = _outdir(args)

    ds = gen_dataset(bundle, arch, count=count, seed=seed,
                     slowdown=float(opts.get("slowdown", 10.0)),
                     max_duration_s=float(opts.get("max_duration_s", 10.0)))
    cio.write_json(out / "dataset.json", {
        **cio.stamp(digest, seed),
        "workload": ds.workload,
        "requested": ds.requested,
        "kept": len(ds.instances),
        "dropped": ds.dropped,
        "n_core": ds.n_core,
        "n_link": ds.n_link,
        "baseline_cycles": ds.baseline_cycles,
        "instances": [{"case_id": i.case_id, **cio.failure_to_dict(i.spec)}
                      for i in ds.instances],
        "negatives": [{"case_id": n.case_id, "mutation": n.mutation, "seed": n.seed}
                      for n in ds.negatives],
    })
    print(f"dataset: {len(ds.instances)} instances ({ds.n_core} core / {ds.n_link} link), "
          f"{ds.dropped} dropped, {len(ds.negatives)} negatives")
    return 0


def cmd_eval(args) -> int:
    manifest, base, digest = _load_manifest(args.manifest)
    arch, seed = _load_common(manifest, base, args.seed)
    opts = manifest.get("eval", {})
    count = int(args.count or opts.get("count", 104))
    workers = args.workers if args.workers else int(opts.get("workers", 1))
    detectors = tuple(opts.get("detectors", ("failrank", "threshold")))
    bundle = bn.get_bundle(manifest.get("workload_bundle", "layered_deep"))
    out = _outdir(args)

    ds = gen_dataset(bundle, arch, count=count, seed=seed)
    report = evaluate(ds, bundle, arch, detectors=detectors,
                      sketch_config=_load_sketch_config(manifest),
                      detector_config=_load_detector_config(manifest),
                      workers=workers)
    cio.write_json(out / "eval_report.json",
                   {**report.to_dict(), **cio.stamp(digest, seed)})
    rows = ["case_id,positive,kind,location,start_s,duration_s,sim_cycles,ratio"
            + "".join(f",{d}_correct,{d}_alarm,{d}_top_type,{d}_top_id" for d in detectors)]
    for o in report.outcomes:
        row = [str(o.case_id), str(int(o.positive)), o.kind,
               o.location.replace(",", ";"), repr(o.start_s), repr(o.duration_s),
               repr(o.sim_cycles), repr(o.ratio)]
        for d in detectors:
            r = o.results[d]
            row += [str(int(r["correct"])), str(int(r["alarm"])), r["top_type"],
                    str(r["top_id"]).replace(",", ";")]
        rows.append(",".join(row))
    (out / "cases.csv").write_text("\n".join(rows) + "\n")
    for name, m in sorted(report.metrics.items()):
        print(f"eval[{name}]: accuracy {m.accuracy_str} fpr {m.fpr_str}")
    print(f"eval: mean compression ratio {report.mean_ratio:.1f}x, artifacts in {out}")
    return 0


def cmd_dse(args) -> int:
    manifest, base, digest = _load_manifest(args.manifest)
    arch, seed = _load_common(manifest, base, args.seed)
    opts = manifest.get("dse", {})
    grid = opts.get("grid", DEFAULT_GRID)
    grid = {k: tuple(v) for k, v in grid.items()}
    exponents = tuple(opts.get("exponents", (-1.0, 1.0, 1.0)))
    acc_count = int(opts.get("acc_count", 10))
    bundle = bn.get_bundle(manifest.get("workload_bundle", "binary_tree"))
    out = _outdir(args)

    report = dse(bundle, arch, grid=grid, exponents=exponents,
                 acc_count=acc_count, seed=seed,
                 detector_config=_load_detector_config(manifest))
    cio.write_json(out / "dse_report.json", {
        **cio.stamp(digest, seed),
        "workload": bundle.name,
        "exponents": list(report.exponents),
        "points": [{"tables": p.tables, "buckets": p.buckets, "threshold": p.threshold,
                    "max_length": p.max_length, "acc": p.acc,
                    "compression_fraction": p.compression_fraction, "ratio": p.ratio,
                    "structure_bytes": p.structure_bytes, "cost": p.cost}
                   for p in report.points],
        "pareto": report.pareto,
        "best": {"tables": report.best.tables, "buckets": report.best.buckets,
                 "threshold": report.best.threshold, "max_length": report.best.max_length,
                 "cost": report.best.cost},
    })
    b = report.best
    print(f"dse: {len(report.points)} points, best (d={b.tables}, m={b.buckets}, "
          f"H={b.threshold}, S={b.max_length}) cost={b.cost:.4g}")
    return 0


def cmd_report(args) -> int:
    data = cio.read_json(Path(args.file))
    if "metrics" in data:
        print(f"evaluation report: workload={data.get('workload')} seed={data.get('seed')}")
        for name, m in sorted(data["metrics"].items()):
            print(f"  {name:<10} accuracy {m['accuracy_str']:<18} fpr {m['fpr_str']}")
        print(f"  compression ratio {data.get('mean_compression_ratio', 0):.1f}x "
              f"over {data.get('n_cases', 0)} cases")
    elif "points" in data:
        best = data["best"]
        print(f"dse report: workload={data.get('workload')} "
              f"{len(data['points'])} points, {len(data.get('pareto', []))} on the frontier")
        print(f"  best: d={best['tables']} m={best['buckets']} H={best['threshold']} "
              f"S={best['max_length']} cost={best['cost']:.4g}")
    elif "candidates" in data:
        cands = data["candidates"]
        print(f"ranking report: {len(cands)} candidates")
        for c in cands[:10]:
            print(f"  {c['type']:<5} {c['id']} score={c['score']:.4f} "
                  f"interval=[{c['interval'][0]:.0f}, {c['interval'][1]:.0f}]")
    else:
        raise ConfigError(f"{args.file}: not a recognized report")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="failslow",
        description="Simulate mesh dataflow workloads with injected fail-slow "
                    "failures and localize the root cause from compressed traces.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", required=True, help="run manifest (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override manifest seed")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("simulate", help="run one simulation and write trace artifacts")
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("detect", help="rank root-cause candidates from trace artifacts")
    common(p)
    p.add_argument("--artifacts", default=None,
                   help="directory with simulate outputs (default: --out)")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("dataset", help="generate a seeded failure dataset")
    common(p)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(fn=cmd_dataset)

    p = sub.add_parser("eval", help="closed-loop accuracy/FPR evaluation")
    common(p)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("dse", help="sketch parameter design-space exploration")
    common(p)
    p.set_defaults(fn=cmd_dse)

    p = sub.add_parser("report", help="print a human-readable summary of a report file")
    p.add_argument("file")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, DeadlockError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
