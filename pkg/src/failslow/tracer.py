"""Root-cause localization: stage-aware core detection, link bandwidth
inference from end-to-end transfer times, the multi-level communication
graph, and the damped iterative ranking that pinpoints the most likely
fail-slow component.

Core detection groups compute observations by execution stage so only
comparable work is compared, measures FLOPs per cycle per core, and
flags one-sided outliers against the leave-one-out group statistics.

Link detection inverts the linear system path_time = sum over traversed
links of volume * theta (theta = 1 / bandwidth) with a multiplicative
expectation-maximization scheme: each iteration distributes every path's
observed delay over its links proportionally to the current per-link
expectation, then re-estimates each theta to maximize the Gaussian
likelihood of the observations. Inverse bandwidths stay positive by
construction and the iteration matches the least-squares answer on
determined noiseless systems.

The multi-level communication graph lays (core, time-window) nodes into
levels, weights intra-level edges by routed traffic volume normalized
per source node, and joins levels through virtual DRAM nodes for
dependencies whose producer and consumer fall in different windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .platform import ArchConfig, Mesh
from .probes import TraceEvent
from .sketch import PatternEntry
from . import workload as wl


# ---------------------------------------------------------------------------
# observations


@dataclass
class Observations:
    """Per-(core, stage) compute stats and per-(src, dst) transfer stats.

    Both views are buildable from the compressed pattern list or from a
    raw event log; values cover recorded events only. Comm slots carry
    the latency spread (sum of squared deviations) so downstream
    detection can distinguish a systematic slowdown from a single
    long-tail stall.
    """

    comp: dict[tuple[int, int], list]   # (core, stage) -> [flops, cycles, n, first, last]
    comm: dict[tuple[int, int], list]   # (src, dst) -> [vol, time, n, first, last, m2]

    @classmethod
    def from_entries(cls, entries: list[PatternEntry]) -> "Observations":
        comp: dict[tuple[int, int], list] = {}
        comm: dict[tuple[int, int], list] = {}
        for e in entries:
            if e.kind == wl.COMM:
                slot = comm.setdefault((e.src, e.dst), [0.0, 0.0, 0, math.inf, 0.0, 0.0])
                slot[0] += e.volume
                slot[5] += e.lat_m2
            elif e.kind == wl.COMP:
                stage = e.key[2]  # comp pattern keys are (kind, core, stage)
                slot = comp.setdefault((e.core, stage), [0.0, 0.0, 0, math.inf, 0.0])
                slot[0] += e.flops
            else:  # io timing is recorded but not used for rate grouping
                continue
            slot[1] += e.cycles_total
            slot[2] += e.lat_count
            slot[3] = min(slot[3], e.first_seen)
            slot[4] = max(slot[4], e.last_end)
        return cls(comp=comp, comm=comm)

    @classmethod
    def from_events(cls, events: list[TraceEvent]) -> "Observations":
        comp: dict[tuple[int, int], list] = {}
        comm: dict[tuple[int, int], list] = {}
        for ev in events:
            dur = ev.end - ev.start
            if ev.kind == wl.COMM:
                slot = comm.setdefault((ev.src, ev.dst), [0.0, 0.0, 0, math.inf, 0.0, 0.0])
                mean_before = slot[1] / slot[2] if slot[2] else 0.0
                slot[0] += ev.payload
                slot[1] += dur
                slot[2] += 1
                # one-pass spread update (Welford over durations)
                slot[5] += (dur - mean_before) * (dur - slot[1] / slot[2])
            elif ev.kind == wl.COMP:
                slot = comp.setdefault((ev.core, ev.stage), [0.0, 0.0, 0, math.inf, 0.0])
                slot[0] += ev.payload
                slot[1] += dur
                slot[2] += 1
            else:
                continue
            slot[3] = min(slot[3], ev.start)
            slot[4] = max(slot[4], ev.end)
        return cls(comp=comp, comm=comm)


# ---------------------------------------------------------------------------
# core-level detection


@dataclass
class DetectorConfig:
    z_threshold: float = 2.0
    ratio_gate: float = 0.7       # flag only when rate < gate x peer mean
    sigma_floor_rel: float = 0.01  # floor on group sigma, relative to peer mean
    min_group: int = 3
    em_tol: float = 1e-7
    em_max_iter: int = 20000
    kappa: float = 0.5            # link candidate cutoff vs nominal bandwidth
    support_min: float = 2.5      # systematic-slowdown evidence gate (t statistic)
    support_effect_min: float = 0.5  # min excess / std: spikes inflate the spread,
                                     # real slowdowns shift the whole distribution
    min_pair_events: int = 3      # pairs with fewer events cannot witness a failure
    mcg_levels: int = 4
    failrank: "FailRankConfig" = field(default_factory=lambda: FailRankConfig())


@dataclass
class CoreCandidate:
    """A core flagged as a fail-slow suspect in at least one stage group."""

    core: int
    stage: int                 # worst stage
    rate: float                # FLOPs per cycle in the worst stage
    group_mean: float
    group_std: float
    score: float               # initial fail-slow probability in (0, 1]
    first: float
    last: float
    stages: list[int] = field(default_factory=list)


def detect_cores(obs: Observations, config: DetectorConfig | None = None
                 ) -> tuple[list[CoreCandidate], list[tuple[int, int]]]:
    """Stage-aware outlier detection on per-core FLOP rates.

    Within each stage group the peer baseline is the leave-one-out mean
    and standard deviation (a lone straggler would otherwise inflate the
    group sigma and mask itself). A core is flagged when its one-sided
    z-score exceeds the threshold and its rate falls below the ratio
    gate; the score maps z through min(1, 0.5 + (z - z_thr) / 4).

    Returns the candidates (one per core, worst stage first) plus the
    (stage, size) list of groups skipped for having fewer than
    ``min_group`` members.
    """
    cfg = config or DetectorConfig()
    by_stage: dict[int, list[tuple[int, float, float, float]]] = {}
    for (core, stage), (flops, cycles, _n, first, last) in obs.comp.items():
        if cycles <= 0:
            continue
        by_stage.setdefault(stage, []).append((core, flops / cycles, first, last))

    flagged: dict[int, CoreCandidate] = {}
    skipped: list[tuple[int, int]] = []
    for stage in sorted(by_stage):
        group = sorted(by_stage[stage])
        if len(group) < cfg.min_group:
            skipped.append((stage, len(group)))
            continue
        rates = [r for _, r, _, _ in group]
        total = sum(rates)
        total_sq = sum(r * r for r in rates)
        n = len(rates)
        for core, rate, first, last in group:
            peer_mean = (total - rate) / (n - 1)
            peer_sq = (total_sq - rate * rate) / (n - 1)
            var = max(peer_sq - peer_mean * peer_mean, 0.0)
            peer_std = math.sqrt(var * (n - 1) / max(n - 2, 1))
            floor = max(peer_std, cfg.sigma_floor_rel * peer_mean)
            if floor <= 0:
                continue
            z = (peer_mean - rate) / floor
            if z <= cfg.z_threshold or rate >= cfg.ratio_gate * peer_mean:
                continue
            score = min(1.0, 0.5 + (z - cfg.z_threshold) / 4.0)
            cand = flagged.get(core)
            if cand is None:
                flagged[core] = CoreCandidate(core=core, stage=stage, rate=rate,
                                              group_mean=peer_mean, group_std=peer_std,
                                              score=score, first=first, last=last,
                                              stages=[stage])
            else:
                cand.stages.append(stage)
                cand.first = min(cand.first, first)
                cand.last = max(cand.last, last)
                if score > cand.score:
                    cand.score = score
                    cand.stage = stage
                    cand.rate = rate
                    cand.group_mean = peer_mean
                    cand.group_std = peer_std
    return sorted(flagged.values(), key=lambda c: (-c.score, c.core)), skipped


# ---------------------------------------------------------------------------
# link-level inference


@dataclass
class LinkCandidate:
    link: tuple[int, int]
    bandwidth_est: float
    score: float              # initial edge score: 1 - b_est / b_nominal
    first: float
    last: float


@dataclass
class LinkInference:
    theta: dict[tuple[int, int], float]
    bandwidths: dict[tuple[int, int], float]
    candidates: list[LinkCandidate]
    unobserved: list[tuple[int, int]]
    iterations: int
    residual: float
    converged: bool


def infer_links(obs: Observations, mesh: Mesh, config: DetectorConfig | None = None
                ) -> LinkInference:
    """Estimate per-link inverse bandwidths from per-pair transfer times.

    Observations are aggregated per (src, dst) pair: mean transferred
    volume and mean end-to-end time, weighted by event count. Links
    never traversed keep their nominal prior and are reported
    unobservable, never as candidates. A candidate additionally needs
    systematic support: some pair through the link must show a mean
    delay shift large against its own spread, which separates genuine
    slowdowns from single long-tail stalls.
    """
    cfg = config or DetectorConfig()
    arch = mesh.arch
    b_nom = arch.link_bandwidth
    pairs = []
    for (src, dst), (vol, time, n, first, last, m2) in sorted(obs.comm.items()):
        if n == 0 or src == dst:
            continue
        path = mesh.route(src, dst)
        if not path:
            continue
        pairs.append((path, vol / n, time / n, float(n), first, last, m2))
    all_links = {lid for path, *_ in pairs for lid in path}
    used = sorted(all_links)
    unobserved = [mesh.links[i] for i in range(mesh.n_links) if i not in all_links]
    if not pairs:
        return LinkInference(theta={}, bandwidths={}, candidates=[], unobserved=unobserved,
                             iterations=0, residual=0.0, converged=True)

    col = {lid: i for i, lid in enumerate(used)}
    a = np.zeros((len(pairs), len(used)))
    t = np.empty(len(pairs))
    w = np.empty(len(pairs))
    for r, (path, vol, tm, cnt, _f, _l, _m2) in enumerate(pairs):
        for lid in path:
            a[r, col[lid]] += vol
        t[r] = tm
        # constant relative-error noise model: weight observations by
        # count / t^2 so congested paths do not dominate the fit
        w[r] = cnt / max(tm, 1e-12) ** 2
    theta = np.full(len(used), 1.0 / b_nom)
    wt = w * t
    numer = a.T @ wt
    iterations = 0
    converged = False
    for iterations in range(1, cfg.em_max_iter + 1):
        denom = a.T @ (w * (a @ theta))
        update = np.where(denom > 0, numer / np.maximum(denom, 1e-300), 1.0)
        new = theta * update
        rel = np.max(np.abs(new - theta) / np.maximum(theta, 1e-300))
        theta = new
        if rel < cfg.em_tol:
            converged = True
            break
    fit = a @ theta
    denom_res = math.sqrt(float(np.sum(w * t * t))) or 1.0
    residual = math.sqrt(float(np.sum(w * (t - fit) ** 2))) / denom_res

    link_first: dict[int, float] = {}
    link_last: dict[int, float] = {}
    support: dict[int, float] = {}
    for path, vol, tm, cnt, first, last, m2 in pairs:
        nominal = vol * len(path) / b_nom
        excess = tm - nominal
        if cnt >= cfg.min_pair_events and excess > 0:
            var = m2 / (cnt - 1) if cnt > 1 else 0.0
            std = math.sqrt(max(var, 0.0))
            sem = std / math.sqrt(cnt)
            t_stat = excess / max(sem, 1e-9 * max(nominal, 1.0))
            if std > 0 and excess < cfg.support_effect_min * std:
                t_stat = 0.0
        else:
            t_stat = 0.0
        for lid in path:
            link_first[lid] = min(link_first.get(lid, math.inf), first)
            link_last[lid] = max(link_last.get(lid, 0.0), last)
            support[lid] = max(support.get(lid, 0.0), t_stat)

    theta_map = {}
    bw_map = {}
    candidates = []
    for lid in used:
        th = float(theta[col[lid]])
        link = mesh.links[lid]
        theta_map[link] = th
        b_est = 1.0 / th if th > 0 else math.inf
        bw_map[link] = b_est
        if b_est < cfg.kappa * b_nom and support[lid] >= cfg.support_min:
            score = min(1.0, max(0.0, 1.0 - b_est / b_nom))
            candidates.append(LinkCandidate(link=link, bandwidth_est=b_est, score=score,
                                            first=link_first[lid], last=link_last[lid]))
    candidates.sort(key=lambda c: (-c.score, c.link))
    return LinkInference(theta=theta_map, bandwidths=bw_map, candidates=candidates,
                         unobserved=unobserved, iterations=iterations,
                         residual=residual, converged=converged)


# ---------------------------------------------------------------------------
# multi-level communication graph


@dataclass
class Mcg:
    """Layered graph of (core, window) nodes with traffic-weighted edges.

    ``nodes`` holds (core, level) and ("dram", level) entries; edges are
    (u_idx, v_idx, level, weight, link) with link None for DRAM hops.
    Outgoing weights of every traffic-bearing node sum to one within its
    level.
    """

    n_levels: int
    nodes: list[tuple]
    node_index: dict[tuple, int]
    edges: list[tuple[int, int, int, float, tuple | None]]
    level_of_stage: dict[int, int]
    core_nodes: dict[int, list[int]]     # level -> node indices of cores
    link_edges: dict[int, list[int]]     # level -> edge indices with a link
    in_edges: list[list[tuple[int, float]]]

    def out_weight_sums(self) -> dict[int, float]:
        sums: dict[int, float] = {}
        for u, _v, _lvl, w, _link in self.edges:
            sums[u] = sums.get(u, 0.0) + w
        return sums


def build_mcg(graph: wl.ComputeGraph, mapping: wl.Mapping, arch: ArchConfig,
              n_levels: int = 4) -> Mcg:
    """Construct the multi-level communication graph.

    Stages partition into up to ``n_levels`` contiguous windows. A
    depth-first traversal of the DAG routes every dependency over the
    mesh and accumulates its volume on the traversed links of the
    producer's window; per-node outgoing traffic is then normalized so
    each weight reads as the probability of failure propagating along
    that edge. Dependencies whose endpoints fall in different windows
    ride virtual DRAM nodes instead, which are the only cross-level
    edges and always point forward in time.
    """
    mesh = Mesh(arch)
    stages = graph.stages()
    n_stages = len(stages)
    levels = max(1, min(n_levels, n_stages)) if n_stages else 1
    level_of_stage = {s: min(i * levels // max(n_stages, 1), levels - 1)
                      for i, s in enumerate(stages)}

    nodes: list[tuple] = []
    node_index: dict[tuple, int] = {}
    for lvl in range(levels):
        for core in range(arch.n_cores):
            node_index[(core, lvl)] = len(nodes)
            nodes.append((core, lvl))
    for lvl in range(levels):
        node_index[("dram", lvl)] = len(nodes)
        nodes.append(("dram", lvl))

    # DFS over the DAG, visiting each dependency edge exactly once
    out_deps: dict[int, list[int]] = {t.id: [] for t in graph.tasks}
    indeg = {t.id: 0 for t in graph.tasks}
    for dep_id, (src, dst, _vol) in enumerate(graph.deps):
        out_deps[src].append(dep_id)
        indeg[dst] += 1
    roots = sorted((tid for tid, d in indeg.items() if d == 0), reverse=True)
    traffic: dict[tuple[int, int, int], float] = {}          # (lvl, u_idx, v_idx) ...
    link_of: dict[tuple[int, int, int], tuple | None] = {}
    stack = list(roots)
    seen_task = set(stack)
    while stack:
        tid = stack.pop()
        for dep_id in reversed(out_deps[tid]):
            src, dst, vol = graph.deps[dep_id]
            a = level_of_stage[graph.task(src).stage]
            b = level_of_stage[graph.task(dst).stage]
            p_src, p_dst = mapping.core_of(src), mapping.core_of(dst)
            if a == b:
                for lid in mesh.route(p_src, p_dst):
                    u_core, v_core = mesh.links[lid]
                    key = (a, node_index[(u_core, a)], node_index[(v_core, a)])
                    traffic[key] = traffic.get(key, 0.0) + vol
                    link_of[key] = (u_core, v_core)
            else:
                k1 = (a, node_index[(p_src, a)], node_index[("dram", a)])
                traffic[k1] = traffic.get(k1, 0.0) + vol
                link_of[k1] = None
                k2 = (a, node_index[("dram", a)], node_index[(p_dst, b)])
                traffic[k2] = traffic.get(k2, 0.0) + vol
                link_of[k2] = None
            if dst not in seen_task:
                seen_task.add(dst)
                stack.append(dst)

    out_sum: dict[int, float] = {}
    for (_lvl, u, _v), vol in traffic.items():
        out_sum[u] = out_sum.get(u, 0.0) + vol
    edges: list[tuple[int, int, int, float, tuple | None]] = []
    core_nodes = {lvl: [node_index[(c, lvl)] for c in range(arch.n_cores)]
                  for lvl in range(levels)}
    link_edges: dict[int, list[int]] = {lvl: [] for lvl in range(levels)}
    in_edges: list[list[tuple[int, float]]] = [[] for _ in nodes]
    for (lvl, u, v) in sorted(traffic):
        vol = traffic[(lvl, u, v)]
        w = vol / out_sum[u]
        link = link_of[(lvl, u, v)]
        if link is not None:
            link_edges[lvl].append(len(edges))
        edges.append((u, v, lvl, w, link))
        in_edges[v].append((u, w))
    return Mcg(n_levels=levels, nodes=nodes, node_index=node_index, edges=edges,
               level_of_stage=level_of_stage, core_nodes=core_nodes,
               link_edges=link_edges, in_edges=in_edges)


# ---------------------------------------------------------------------------
# ranking


@dataclass
class FailRankConfig:
    damping: float = 0.6       # weight of neighbor propagation vs the prior
    alpha: float = 0.1         # edge rule: propagation weight coefficient
    beta: float = 0.3          # edge rule: source node score coefficient
    gamma: float = 0.6         # edge rule: initial edge score coefficient
    max_iter: int = 200
    tol: float = 1e-6
    softmax_temp: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.damping < 1.0:
            raise ConfigError("damping must be in (0, 1)")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("edge coefficients must be non-negative")
        if self.softmax_temp <= 0:
            raise ConfigError("softmax temperature must be positive")


@dataclass
class RankedCandidate:
    type: str                  # "core" or "link"
    ident: object              # core id or (u, v) link tuple
    score: float               # softmax-normalized, level-local
    raw_score: float           # converged pre-softmax score
    first: float
    last: float


@dataclass
class FailRankResult:
    ranked: list[RankedCandidate]
    node_scores: dict[tuple, float]
    edge_scores: dict[tuple, float]          # (level, link) -> converged edge score
    node_softmax: dict[tuple, float]
    edge_softmax: dict[tuple, float]
    iterations: int
    final_delta: float
    converged: bool


def iterate_scores(s0: np.ndarray, in_edges: list[list[tuple[int, float]]],
                   config: FailRankConfig) -> tuple[np.ndarray, int, float, bool]:
    """Damped propagation to a fixed point.

    s(v) <- (1 - damping) * s0(v) + damping * sum over incoming edges of
    w(u, v) * s(u), iterated until the max absolute change drops under
    the tolerance or the iteration budget runs out.
    """
    n = len(s0)
    rows, cols, vals = [], [], []
    for v, ins in enumerate(in_edges):
        for u, w in ins:
            rows.append(v)
            cols.append(u)
            vals.append(w)
    m = np.zeros((n, n))
    if rows:
        m[rows, cols] = vals
    lam = config.damping
    base = (1.0 - lam) * s0
    s = s0.astype(float).copy()
    delta = 0.0
    for it in range(1, config.max_iter + 1):
        s_new = base + lam * (m @ s)
        delta = float(np.max(np.abs(s_new - s))) if n else 0.0
        s = s_new
        if delta < config.tol:
            return s, it, delta, True
    return s, config.max_iter, delta, False


def _softmax(values: list[float], temp: float) -> list[float]:
    if not values:
        return []
    peak = max(values)
    exps = [math.exp((v - peak) / temp) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def failrank(mcg: Mcg, core_candidates: list[CoreCandidate],
             link_candidates: list[LinkCandidate],
             config: FailRankConfig | None = None) -> FailRankResult:
    """Rank fail-slow candidates over the communication graph.

    Node priors come from core detection (zero elsewhere), edge priors
    from link inference. Node scores iterate to convergence; each edge
    then combines its propagation weight, its source node's converged
    score, and its prior: l = alpha w + beta s(u) + gamma l0. Node and
    edge scores are softmax-normalized within each level, and candidates
    of both types are interleaved by normalized score, descending. On a
    clean run (no candidates) the ranking is empty.
    """
    cfg = config or FailRankConfig()
    s0 = np.zeros(len(mcg.nodes))
    cand_levels: dict[int, set[int]] = {}
    for cand in core_candidates:
        lvls = {mcg.level_of_stage.get(s) for s in (cand.stages or [cand.stage])}
        lvls.discard(None)
        if not lvls:
            lvls = set(range(mcg.n_levels))
        cand_levels[cand.core] = lvls
        for lvl in lvls:
            s0[mcg.node_index[(cand.core, lvl)]] = cand.score

    s, iterations, delta, converged = iterate_scores(s0, mcg.in_edges, cfg)

    l0_by_link = {c.link: c.score for c in link_candidates}
    edge_scores: dict[tuple, float] = {}
    for idx, (u, _v, lvl, w, link) in enumerate(mcg.edges):
        if link is None:
            continue
        l0 = l0_by_link.get(link, 0.0)
        edge_scores[(lvl, link)] = cfg.alpha * w + cfg.beta * float(s[u]) + cfg.gamma * l0

    node_softmax: dict[tuple, float] = {}
    for lvl in range(mcg.n_levels):
        idxs = mcg.core_nodes[lvl]
        probs = _softmax([float(s[i]) for i in idxs], cfg.softmax_temp)
        for i, p in zip(idxs, probs):
            node_softmax[mcg.nodes[i]] = p
    edge_softmax: dict[tuple, float] = {}
    for lvl in range(mcg.n_levels):
        keys = [(lvl, mcg.edges[e][4]) for e in mcg.link_edges[lvl]]
        probs = _softmax([edge_scores[k] for k in keys], cfg.softmax_temp)
        for k, p in zip(keys, probs):
            edge_softmax[k] = p

    ranked: list[RankedCandidate] = []
    for cand in core_candidates:
        lvls = cand_levels[cand.core]
        best_soft = max(node_softmax.get((cand.core, lvl), 0.0) for lvl in lvls)
        best_raw = max(float(s[mcg.node_index[(cand.core, lvl)]]) for lvl in lvls)
        ranked.append(RankedCandidate(type="core", ident=cand.core, score=best_soft,
                                      raw_score=best_raw, first=cand.first, last=cand.last))
    for cand in link_candidates:
        keys = [(lvl, cand.link) for lvl in range(mcg.n_levels)
                if (lvl, cand.link) in edge_softmax]
        if keys:
            best_key = max(keys, key=lambda k: edge_scores[k])
            soft, raw = edge_softmax[best_key], edge_scores[best_key]
        else:  # candidate link carries no graph traffic; keep prior as score
            soft, raw = 0.0, cand.score
        ranked.append(RankedCandidate(type="link", ident=cand.link, score=soft,
                                      raw_score=raw, first=cand.first, last=cand.last))
    # order by the converged scores; the softmax value is a level-local
    # probability and is not comparable across levels of different size
    ranked.sort(key=lambda r: (-r.raw_score, -r.score, r.type, str(r.ident)))

    node_scores = {mcg.nodes[i]: float(s[i]) for i in range(len(mcg.nodes))}
    return FailRankResult(ranked=ranked, node_scores=node_scores, edge_scores=edge_scores,
                          node_softmax=node_softmax, edge_softmax=edge_softmax,
                          iterations=iterations, final_delta=delta, converged=converged)


# ---------------------------------------------------------------------------
# end-to-end report


@dataclass
class DetectionReport:
    candidates: list[RankedCandidate]
    core_candidates: list[CoreCandidate]
    link_candidates: list[LinkCandidate]
    em_iterations: int
    em_residual: float
    em_converged: bool
    failrank_iterations: int
    failrank_delta: float
    failrank_converged: bool
    skipped_groups: list[tuple[int, int]]

    @property
    def top(self) -> RankedCandidate | None:
        return self.candidates[0] if self.candidates else None

    def to_dict(self) -> dict:
        return {
            "candidates": [
                {"type": c.type,
                 "id": list(c.ident) if isinstance(c.ident, tuple) else c.ident,
                 "score": c.score, "raw_score": c.raw_score,
                 "interval": [c.first, c.last]}
                for c in self.candidates
            ],
            "em": {"iterations": self.em_iterations, "residual": self.em_residual,
                   "converged": self.em_converged},
            "failrank": {"iterations": self.failrank_iterations,
                         "final_delta": self.failrank_delta,
                         "converged": self.failrank_converged},
            "skipped_groups": [list(g) for g in self.skipped_groups],
        }


def detect_failslow(obs: Observations, graph: wl.ComputeGraph, mapping: wl.Mapping,
                    arch: ArchConfig, config: DetectorConfig | None = None
                    ) -> DetectionReport:
    """Full pipeline: detection, inference, graph construction, ranking."""
    cfg = config or DetectorConfig()
    mesh = Mesh(arch)
    cores, skipped = detect_cores(obs, cfg)
    links = infer_links(obs, mesh, cfg)
    mcg = build_mcg(graph, mapping, arch, n_levels=cfg.mcg_levels)
    result = failrank(mcg, cores, links.candidates, cfg.failrank)
    return DetectionReport(
        candidates=result.ranked, core_candidates=cores,
        link_candidates=links.candidates,
        em_iterations=links.iterations, em_residual=links.residual,
        em_converged=links.converged,
        failrank_iterations=result.iterations, failrank_delta=result.final_delta,
        failrank_converged=result.converged, skipped_groups=skipped,
    )
