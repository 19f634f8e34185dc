"""Closed-loop evaluation: failure dataset generation, injection and
detection runs, accuracy/false-positive metrics, the threshold-filtering
baseline, and design-space exploration over sketch parameters.

A dataset is generated per (architecture, workload): locations are
sampled architecture-wide at a 7:3 core-to-link split, and instances
landing on resources the mapped workload never touches are excluded
(with a warning), so reported denominators vary per workload. Failure
windows start inside the measured run and last up to ten seconds, which
at on-chip timescales usually persists to the end of the run; the
slowdown factor is fixed at 10x. Negative samples pair every kept
positive with a failure-free run of a structurally mutated workload.

A detection is correct when the top-ranked candidate names the injected
component and its reported interval overlaps the injected window. A
false alarm is any candidate reported on a negative run.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import random
import warnings
from dataclasses import dataclass

from . import bundles as bn
from . import workload as wl
from .errors import ConfigError
from .platform import ArchConfig, FailureSpec, Mesh, Platform
from .probes import TraceEvent, emit
from .sketch import SketchConfig, make_report
from .tracer import (DetectorConfig, DetectionReport, Observations, RankedCandidate,
                     detect_cores, failrank, infer_links)


# ---------------------------------------------------------------------------
# dataset


@dataclass(frozen=True)
class FailureInstance:
    case_id: int
    spec: FailureSpec


@dataclass(frozen=True)
class NegativeCase:
    case_id: int
    mutation: int
    seed: int


@dataclass
class FailureDataset:
    workload: str
    arch: ArchConfig
    seed: int
    requested: int
    instances: list[FailureInstance]
    negatives: list[NegativeCase]
    baseline_cycles: float
    used_cores: list[int]
    used_links: list[tuple[int, int]]
    dropped: int

    @property
    def n_core(self) -> int:
        return sum(1 for i in self.instances if i.spec.kind == "core")

    @property
    def n_link(self) -> int:
        return sum(1 for i in self.instances if i.spec.kind == "link")


def used_resources(graph: wl.ComputeGraph, mapping: wl.Mapping, arch: ArchConfig
                   ) -> tuple[set[int], set[tuple[int, int]]]:
    """Cores and links the mapped workload actually exercises."""
    mesh = Mesh(arch)
    cores = set(mapping.assignment.values())
    links: set[tuple[int, int]] = set()
    for src, dst, _vol in graph.deps:
        a, b = mapping.core_of(src), mapping.core_of(dst)
        if a != b:
            links.update(mesh.links[lid] for lid in mesh.route(a, b))
    return cores, links


def gen_dataset(bundle: bn.WorkloadBundle, arch: ArchConfig, count: int, seed: int,
                slowdown: float = 10.0, max_duration_s: float = 10.0,
                start_fraction: float = 0.6) -> FailureDataset:
    """Generate a seeded failure dataset for one workload.

    Roughly 70% of instances target cores and 30% links. Locations are
    drawn uniformly over the whole mesh; instances on unused resources
    are excluded, reducing the kept count below ``count``. Start times
    are uniform over the first ``start_fraction`` of the failure-free
    run; durations are uniform over (0, ``max_duration_s``] seconds.
    """
    if count < 1:
        raise ConfigError("dataset count must be >= 1")
    graph, mapping = bn.build_cached(bundle, arch)
    probed = bn.program_cached(bundle, arch, plan="full")
    baseline = Platform(arch, seed=_case_seed(seed, -1)).run(probed)
    t_run_s = arch.cycles_to_seconds(baseline.total_cycles)
    cores, links = used_resources(graph, mapping, arch)
    mesh = Mesh(arch)

    rng = random.Random(seed)
    n_core = round(0.7 * count)
    kinds = ["core"] * n_core + ["link"] * (count - n_core)
    instances: list[FailureInstance] = []
    dropped = 0
    for i, kind in enumerate(kinds):
        if kind == "core":
            target = rng.randrange(arch.n_cores)
            location = ("core", target)
            usable = target in cores
        else:
            target = mesh.links[rng.randrange(mesh.n_links)]
            location = ("link", target)
            usable = target in links
        start = rng.uniform(0.0, start_fraction * t_run_s)
        duration = max(rng.uniform(0.0, max_duration_s), 1e-9)
        if not usable:
            dropped += 1
            continue
        instances.append(FailureInstance(
            case_id=len(instances),
            spec=FailureSpec(location=location, start_s=start,
                             duration_s=duration, slowdown=slowdown)))
    if dropped:
        warnings.warn(f"{bundle.name}: dropped {dropped} of {count} failure instances "
                      f"on unused resources", stacklevel=2)
    negatives = [NegativeCase(case_id=i, mutation=i % 4, seed=_case_seed(seed, 10_000 + i))
                 for i in range(len(instances))]
    return FailureDataset(workload=bundle.name, arch=arch, seed=seed, requested=count,
                          instances=instances, negatives=negatives,
                          baseline_cycles=baseline.total_cycles,
                          used_cores=sorted(cores), used_links=sorted(links),
                          dropped=dropped)


def _case_seed(base: int, case_id: int) -> int:
    return (base * 1_000_003 + case_id * 7919 + 12345) & 0x7FFFFFFF


# ---------------------------------------------------------------------------
# threshold-filtering baseline


def threshold_baseline(events: list[TraceEvent], mesh: Mesh, threshold: float = 3.0
                       ) -> list[RankedCandidate]:
    """Flag any component whose instruction latency exceeds threshold x
    nominal; candidates ranked by exceedance magnitude.

    A slow compute instruction flags its core. A slow transfer cannot be
    localized within its route from the raw record alone, so it flags
    every link on the path.
    """
    arch = mesh.arch
    mu, bw = arch.core_mu, arch.link_bandwidth
    flags: dict[tuple, list] = {}

    def flag(kind: str, ident, exceed: float, start: float, end: float) -> None:
        slot = flags.get((kind, ident))
        if slot is None:
            flags[(kind, ident)] = [exceed, start, end]
        else:
            slot[0] = max(slot[0], exceed)
            slot[1] = min(slot[1], start)
            slot[2] = max(slot[2], end)

    for ev in events:
        dur = ev.end - ev.start
        if ev.kind == wl.COMP:
            nominal = ev.payload / mu
            if nominal <= 0:
                continue
            exceed = dur / nominal
            if exceed > threshold:
                flag("core", ev.core, exceed, ev.start, ev.end)
        elif ev.kind == wl.COMM:
            path = mesh.route(ev.src, ev.dst)
            if not path:
                continue
            nominal = len(path) * ev.payload / bw
            exceed = dur / nominal
            if exceed > threshold:
                for lid in path:
                    flag("link", mesh.links[lid], exceed, ev.start, ev.end)

    ranked = [RankedCandidate(type=kind, ident=ident, score=vals[0], raw_score=vals[0],
                              first=vals[1], last=vals[2])
              for (kind, ident), vals in flags.items()]
    ranked.sort(key=lambda r: (-r.score, r.type, str(r.ident)))
    return ranked


# ---------------------------------------------------------------------------
# per-case execution


@dataclass
class CaseOutcome:
    case_id: int
    positive: bool
    kind: str                     # "core", "link", or "negative"
    location: str
    start_s: float
    duration_s: float
    sim_cycles: float
    ratio: float
    results: dict[str, dict]      # detector name -> {top_type, top_id, correct, alarm, ...}


_WORKER: dict = {}


def _init_worker(bundle: bn.WorkloadBundle, arch: ArchConfig, sketch_config: SketchConfig,
                 detector_config: DetectorConfig, detectors: tuple[str, ...],
                 baseline_threshold: float) -> None:
    _WORKER.update(bundle=bundle, arch=arch, sketch=sketch_config,
                   det=detector_config, detectors=detectors,
                   thr=baseline_threshold, mesh=Mesh(arch))


def _interval_overlaps(first: float, last: float, lo: float, hi: float) -> bool:
    return first < hi and last >= lo


def _detect_case(events, probed, graph, mapping, mcg):
    """Sketch the trace and run the ranking pipeline on the patterns."""
    arch, sk_cfg, det_cfg = _WORKER["arch"], _WORKER["sketch"], _WORKER["det"]
    emitted = emit(events, probed, sketch_config=sk_cfg)
    report = make_report(list(emitted.sketches.values()), emitted.raw_bytes)
    obs = Observations.from_entries(report.entries)
    cores, skipped = detect_cores(obs, det_cfg)
    links = infer_links(obs, _WORKER["mesh"], det_cfg)
    result = failrank(mcg, cores, links.candidates, det_cfg.failrank)
    det = DetectionReport(
        candidates=result.ranked, core_candidates=cores,
        link_candidates=links.candidates, em_iterations=links.iterations,
        em_residual=links.residual, em_converged=links.converged,
        failrank_iterations=result.iterations, failrank_delta=result.final_delta,
        failrank_converged=result.converged, skipped_groups=skipped)
    return det, report.ratio


def _judge(candidates: list[RankedCandidate], spec: FailureSpec | None,
           window: tuple[float, float] | None) -> dict:
    top = candidates[0] if candidates else None
    out = {
        "n_candidates": len(candidates),
        "top_type": top.type if top else "",
        "top_id": str(top.ident) if top else "",
        "top_score": top.score if top else 0.0,
        "alarm": bool(candidates),
    }
    if spec is None:
        out["correct"] = not candidates  # a clean run should stay silent
        return out
    ok = False
    if top is not None and top.type == spec.kind:
        if top.ident == spec.target and window is not None:
            ok = _interval_overlaps(top.first, top.last, window[0], window[1])
    out["correct"] = ok
    return out


def _run_positive(inst: FailureInstance) -> CaseOutcome:
    bundle, arch = _WORKER["bundle"], _WORKER["arch"]
    graph, mapping = bn.build_cached(bundle, arch)
    probed = bn.program_cached(bundle, arch, plan="full")
    mcg = bn.mcg_cached(bundle, arch, n_levels=_WORKER["det"].mcg_levels)
    seed = _case_seed(_WORKER["dataset_seed"], inst.case_id)
    platform = Platform(arch, [inst.spec], seed=seed)
    run = platform.run(probed)
    window = (arch.seconds_to_cycles(inst.spec.start_s),
              arch.seconds_to_cycles(inst.spec.start_s + inst.spec.duration_s))
    results = {}
    ratio = 0.0
    if "failrank" in _WORKER["detectors"]:
        det, ratio = _detect_case(run.events, probed, graph, mapping, mcg)
        results["failrank"] = _judge(det.candidates, inst.spec, window)
    if "threshold" in _WORKER["detectors"]:
        ranked = threshold_baseline(run.events, _WORKER["mesh"], _WORKER["thr"])
        results["threshold"] = _judge(ranked, inst.spec, window)
    return CaseOutcome(case_id=inst.case_id, positive=True, kind=inst.spec.kind,
                       location=str(inst.spec.target), start_s=inst.spec.start_s,
                       duration_s=inst.spec.duration_s, sim_cycles=run.total_cycles,
                       ratio=ratio, results=results)


def _run_negative(neg: NegativeCase) -> CaseOutcome:
    bundle, arch = _WORKER["bundle"], _WORKER["arch"]
    graph, mapping = bn.build_cached(bundle, arch, mutation=neg.mutation)
    probed = bn.program_cached(bundle, arch, mutation=neg.mutation, plan="full")
    mcg = bn.mcg_cached(bundle, arch, mutation=neg.mutation,
                        n_levels=_WORKER["det"].mcg_levels)
    run = Platform(arch, seed=neg.seed).run(probed)
    results = {}
    ratio = 0.0
    if "failrank" in _WORKER["detectors"]:
        det, ratio = _detect_case(run.events, probed, graph, mapping, mcg)
        results["failrank"] = _judge(det.candidates, None, None)
    if "threshold" in _WORKER["detectors"]:
        ranked = threshold_baseline(run.events, _WORKER["mesh"], _WORKER["thr"])
        results["threshold"] = _judge(ranked, None, None)
    return CaseOutcome(case_id=neg.case_id, positive=False, kind="negative",
                       location="", start_s=0.0, duration_s=0.0,
                       sim_cycles=run.total_cycles, ratio=ratio, results=results)


def _run_case(args) -> CaseOutcome:
    kind, payload = args
    return _run_positive(payload) if kind == "pos" else _run_negative(payload)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class DetectorMetrics:
    name: str
    correct: int
    total: int
    false_alarms: int
    negatives: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def fpr(self) -> float:
        return self.false_alarms / self.negatives if self.negatives else 0.0

    @property
    def accuracy_str(self) -> str:
        return f"{100 * self.accuracy:.2f}({self.correct}/{self.total})"

    @property
    def fpr_str(self) -> str:
        return f"{100 * self.fpr:.2f}({self.false_alarms}/{self.negatives})"


@dataclass
class EvalReport:
    workload: str
    seed: int
    metrics: dict[str, DetectorMetrics]
    outcomes: list[CaseOutcome]
    mean_ratio: float
    total_sim_cycles: float

    def to_dict(self) -> dict:
        return {
            "workload": self.workload,
            "seed": self.seed,
            "metrics": {
                name: {"accuracy": m.accuracy, "accuracy_str": m.accuracy_str,
                       "fpr": m.fpr, "fpr_str": m.fpr_str,
                       "correct": m.correct, "total": m.total,
                       "false_alarms": m.false_alarms, "negatives": m.negatives}
                for name, m in sorted(self.metrics.items())
            },
            "mean_compression_ratio": self.mean_ratio,
            "total_sim_cycles": self.total_sim_cycles,
            "n_cases": len(self.outcomes),
        }


def evaluate(dataset: FailureDataset, bundle: bn.WorkloadBundle, arch: ArchConfig,
             detectors: tuple[str, ...] = ("failrank", "threshold"),
             sketch_config: SketchConfig | None = None,
             detector_config: DetectorConfig | None = None,
             baseline_threshold: float = 3.0,
             workers: int | None = None) -> EvalReport:
    """Run every dataset case through the selected detectors.

    Cases are independent; with ``workers`` > 1 they run in forked
    worker processes and results merge deterministically by case id.
    """
    unknown = set(detectors) - {"failrank", "threshold"}
    if unknown:
        raise ConfigError(f"unknown detectors {sorted(unknown)}")
    sk_cfg = sketch_config or SketchConfig()
    det_cfg = detector_config or DetectorConfig()

    tasks = [("pos", inst) for inst in dataset.instances]
    tasks += [("neg", neg) for neg in dataset.negatives]

    _init_worker(bundle, arch, sk_cfg, det_cfg, tuple(detectors), baseline_threshold)
    _WORKER["dataset_seed"] = dataset.seed
    # warm shared caches before forking
    for mutation in {None, *(n.mutation for n in dataset.negatives)}:
        bn.build_cached(bundle, arch, mutation)
        bn.program_cached(bundle, arch, mutation, plan="full")
        bn.mcg_cached(bundle, arch, mutation, n_levels=det_cfg.mcg_levels)

    if workers and workers > 1 and len(tasks) > 1:
        ctx = mp.get_context("fork")
        with ctx.Pool(processes=workers) as pool:
            outcomes = pool.map(_run_case, tasks, chunksize=4)
    else:
        outcomes = [_run_case(t) for t in tasks]
    outcomes.sort(key=lambda o: (not o.positive, o.case_id))

    metrics: dict[str, DetectorMetrics] = {}
    for name in detectors:
        correct = sum(1 for o in outcomes if o.positive and o.results[name]["correct"])
        alarms = sum(1 for o in outcomes if not o.positive and o.results[name]["alarm"])
        metrics[name] = DetectorMetrics(
            name=name, correct=correct, total=len(dataset.instances),
            false_alarms=alarms, negatives=len(dataset.negatives))
    ratios = [o.ratio for o in outcomes if o.ratio > 0]
    mean_ratio = sum(ratios) / len(ratios) if ratios else 0.0
    return EvalReport(workload=dataset.workload, seed=dataset.seed, metrics=metrics,
                      outcomes=outcomes, mean_ratio=mean_ratio,
                      total_sim_cycles=sum(o.sim_cycles for o in outcomes))


# ---------------------------------------------------------------------------
# design-space exploration


@dataclass(frozen=True)
class DsePoint:
    tables: int
    buckets: int
    threshold: int
    max_length: int
    acc: float
    compression_fraction: float   # compressed bytes / raw bytes (lower is better)
    ratio: float                  # raw / compressed
    structure_bytes: int
    cost: float


@dataclass
class DseReport:
    points: list[DsePoint]
    pareto: list[int]             # indices into points
    best: DsePoint
    exponents: tuple[float, float, float]


DEFAULT_GRID = {
    "tables": (1, 2, 3, 4),
    "buckets": (128, 256, 512, 1024),
    "threshold": (5, 10, 20, 40),
    "max_length": (2048, 8192, 32768),
}


def _grid_configs(grid: dict) -> list[SketchConfig]:
    out = []
    for d in grid.get("tables", (3,)):
        for m in grid.get("buckets", (512,)):
            for h in grid.get("threshold", (10,)):
                for s in grid.get("max_length", (8192,)):
                    out.append(SketchConfig(tables=d, buckets=m, threshold=h, max_length=s))
    return out


def dse(bundle: bn.WorkloadBundle, arch: ArchConfig, grid: dict | None = None,
        exponents: tuple[float, float, float] = (-1.0, 1.0, 1.0),
        acc_count: int = 10, seed: int = 0,
        detector_config: DetectorConfig | None = None) -> DseReport:
    """Sweep sketch parameters and score COST = ACC^a * R^b * M^c.

    With the default exponents (-1, 1, 1) lower cost means higher
    accuracy, a smaller compressed fraction R, and a smaller structure
    footprint M. Simulations run once per dataset case; each grid point
    only re-sketches the cached traces, so wide grids stay affordable.
    """
    configs = _grid_configs(grid or DEFAULT_GRID)
    det_cfg = detector_config or DetectorConfig()
    a, b, c = exponents

    dataset = gen_dataset(bundle, arch, count=acc_count, seed=seed)
    graph, mapping = bn.build_cached(bundle, arch)
    probed = bn.program_cached(bundle, arch, plan="full")
    mcg = bn.mcg_cached(bundle, arch, n_levels=det_cfg.mcg_levels)
    mesh = Mesh(arch)

    clean = Platform(arch, seed=_case_seed(seed, -1)).run(probed)
    cached_runs = []
    for inst in dataset.instances:
        run = Platform(arch, [inst.spec], seed=_case_seed(seed, inst.case_id)).run(probed)
        window = (arch.seconds_to_cycles(inst.spec.start_s),
                  arch.seconds_to_cycles(inst.spec.start_s + inst.spec.duration_s))
        cached_runs.append((inst.spec, window, run.events))

    points: list[DsePoint] = []
    for cfg in configs:
        emitted = emit(clean.events, probed, sketch_config=cfg)
        rep = make_report(list(emitted.sketches.values()), emitted.raw_bytes)
        fraction = (rep.compressed_bytes / rep.raw_bytes) if rep.raw_bytes else 1.0
        correct = 0
        for spec, window, events in cached_runs:
            emitted = emit(events, probed, sketch_config=cfg)
            entries = make_report(list(emitted.sketches.values())).entries
            obs = Observations.from_entries(entries)
            cores, _sk = detect_cores(obs, det_cfg)
            links = infer_links(obs, mesh, det_cfg)
            ranked = failrank(mcg, cores, links.candidates, det_cfg.failrank).ranked
            verdict = _judge(ranked, spec, window)
            correct += 1 if verdict["correct"] else 0
        acc = correct / len(cached_runs) if cached_runs else 0.0
        m_bytes = cfg.structure_bytes
        cost = (acc ** a if acc > 0 else math.inf) * (fraction ** b) * (m_bytes ** c)
        points.append(DsePoint(tables=cfg.tables, buckets=cfg.buckets,
                               threshold=cfg.threshold, max_length=cfg.max_length,
                               acc=acc, compression_fraction=fraction,
                               ratio=rep.ratio, structure_bytes=m_bytes, cost=cost))

    pareto = []
    for i, p in enumerate(points):
        dominated = any(
            (q.acc >= p.acc and q.compression_fraction <= p.compression_fraction
             and q.structure_bytes <= p.structure_bytes)
            and (q.acc > p.acc or q.compression_fraction < p.compression_fraction
                 or q.structure_bytes < p.structure_bytes)
            for q in points)
        if not dominated:
            pareto.append(i)
    best = min(points, key=lambda p: p.cost)
    return DseReport(points=points, pareto=pareto, best=best, exponents=exponents)
