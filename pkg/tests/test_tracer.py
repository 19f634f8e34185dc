import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from failslow import workload as wl
from failslow.errors import ConfigError
from failslow.platform import ArchConfig, Mesh
from failslow.tracer import (DetectorConfig, FailRankConfig, Mcg, Observations,
                             build_mcg, detect_cores, failrank, infer_links,
                             iterate_scores, _softmax)


def arch4(**kw):
    defaults = dict(mesh_width=4, mesh_height=4, core_mu=64.0, core_sigma=0.0,
                    link_bandwidth=64.0, link_shape=0.0, link_rate=1.0)
    defaults.update(kw)
    return ArchConfig(**defaults)


def comp_obs(rates_by_stage: dict[int, dict[int, float]], flops: float = 64_000.0
             ) -> Observations:
    comp = {}
    for stage, rates in rates_by_stage.items():
        for core, rate in rates.items():
            comp[(core, stage)] = [flops, flops / rate, 10, 0.0, 1000.0]
    return Observations(comp=comp, comm={})


class TestDetectCores:
    def test_equal_rates_give_no_candidates(self):
        obs = comp_obs({0: {c: 100.0 for c in range(8)}})
        cands, skipped = detect_cores(obs)
        assert cands == [] and skipped == []

    def test_single_slow_core_flagged(self):
        obs = comp_obs({0: {0: 100.0, 1: 100.0, 2: 100.0, 3: 10.0}})
        cands, _ = detect_cores(obs)
        assert [c.core for c in cands] == [3]
        assert 0.0 < cands[0].score <= 1.0
        assert cands[0].rate == pytest.approx(10.0)
        assert cands[0].group_mean == pytest.approx(100.0)

    def test_small_group_skipped_with_warning(self):
        obs = comp_obs({0: {0: 100.0, 1: 10.0}})
        cands, skipped = detect_cores(obs)
        assert cands == []
        assert skipped == [(0, 2)]

    def test_mild_variation_not_flagged(self):
        rng = random.Random(0)
        rates = {c: 100.0 * (1 + 0.02 * rng.uniform(-1, 1)) for c in range(16)}
        cands, _ = detect_cores(comp_obs({0: rates}))
        assert cands == []

    def test_two_slow_cores_both_flagged(self):
        rates = {c: 100.0 for c in range(16)}
        rates[6] = 10.0
        rates[10] = 11.0
        cands, _ = detect_cores(comp_obs({0: rates}))
        assert {c.core for c in cands} == {6, 10}

    def test_candidate_merges_stages(self):
        obs = comp_obs({0: {c: (10.0 if c == 2 else 100.0) for c in range(8)},
                        1: {c: (12.0 if c == 2 else 100.0) for c in range(8)},
                        2: {c: 100.0 for c in range(8)}})
        cands, _ = detect_cores(obs)
        assert len(cands) == 1
        assert cands[0].core == 2
        assert sorted(cands[0].stages) == [0, 1]


def mesh_obs(mesh, rows):
    """rows: list of (src, dst, volume, time, count); zero latency spread."""
    comm = {}
    for src, dst, vol, t, n in rows:
        comm[(src, dst)] = [vol * n, t * n, n, 0.0, 1000.0, 0.0]
    return Observations(comp={}, comm=comm)


class TestInferLinks:
    def test_single_one_hop_event_fully_determined(self):
        mesh = Mesh(arch4())
        obs = mesh_obs(mesh, [(0, 1, 100, 10.0, 1)])
        inf = infer_links(obs, mesh)
        assert inf.theta[(0, 1)] == pytest.approx(0.1, rel=1e-6)
        assert inf.bandwidths[(0, 1)] == pytest.approx(10.0, rel=1e-6)

    def test_untraversed_links_are_unobservable(self):
        mesh = Mesh(arch4())
        obs = mesh_obs(mesh, [(0, 1, 100, 10.0, 1)])
        inf = infer_links(obs, mesh)
        assert (5, 6) in inf.unobserved
        assert (5, 6) not in inf.theta

    def test_healthy_system_yields_no_candidates(self):
        mesh = Mesh(arch4())
        rows = [(c, c + 1, 6144, 96.0, 50) for c in range(0, 3)]
        inf = infer_links(mesh_obs(mesh, rows), mesh)
        assert inf.candidates == []

    def test_degraded_link_becomes_candidate(self):
        mesh = Mesh(arch4())
        rows = [(0, 1, 6400, 100.0, 50), (1, 2, 6400, 1000.0, 50), (2, 3, 6400, 100.0, 50)]
        inf = infer_links(mesh_obs(mesh, rows), mesh)
        assert [c.link for c in inf.candidates] == [(1, 2)]
        cand = inf.candidates[0]
        assert cand.bandwidth_est == pytest.approx(6.4, rel=1e-4)
        assert cand.score == pytest.approx(1 - 6.4 / 64.0, rel=1e-4)

    def test_empty_observations(self):
        mesh = Mesh(arch4())
        inf = infer_links(Observations(comp={}, comm={}), mesh)
        assert inf.candidates == [] and inf.theta == {}
        assert len(inf.unobserved) == mesh.n_links

    @pytest.mark.parametrize("seed", range(6))
    def test_determined_system_matches_least_squares(self, seed):
        # square noiseless systems; the full 20-system sweep runs in acceptance
        mesh = Mesh(arch4())
        rng = random.Random(seed)
        theta_true, rows = random_determined_system(mesh, rng, max_links=8)
        inf = infer_links(mesh_obs(mesh, rows), mesh,
                          DetectorConfig(em_tol=1e-12, em_max_iter=200_000))
        for link, true in theta_true.items():
            assert inf.theta[link] == pytest.approx(true, rel=1e-6)


def random_determined_system(mesh, rng, max_links=12):
    """Build a square full-rank noiseless path system over <= max_links links.

    Pairs are sampled until their routes stop fitting the link budget;
    rows are then picked greedily so each one raises the matrix rank,
    which yields exactly one row per unknown.
    """
    arch = mesh.arch
    pairs = [(s, d) for s in range(arch.n_cores) for d in range(arch.n_cores) if s != d]
    rng.shuffle(pairs)
    chosen, links = [], set()
    for p in pairs:
        path = set(mesh.route(*p))
        if not path or len(links | path) > max_links:
            continue
        chosen.append(p)
        links |= path
        if len(chosen) >= 6 * max_links:
            break
    used = sorted(links)
    col = {l: i for i, l in enumerate(used)}

    def row_of(p):
        r = np.zeros(len(used))
        for lid in mesh.route(*p):
            r[col[lid]] += 1.0
        return r

    picked, basis = [], []
    for p in chosen:
        cand = basis + [row_of(p)]
        if np.linalg.matrix_rank(np.array(cand)) > len(basis):
            basis = cand
            picked.append(p)
        if len(picked) == len(used):
            break
    assert len(picked) == len(used), "sampled pairs do not span the link set"

    theta_true = {mesh.links[l]: rng.uniform(0.005, 0.05) for l in used}
    vol = 1000.0
    rows = []
    for p in picked:
        t = sum(theta_true[mesh.links[l]] * vol for l in mesh.route(*p))
        rows.append((p[0], p[1], vol, t, 10))
    return theta_true, rows


class TestBuildMcg:
    def graph_two_consumers(self):
        tasks = [wl.Task(id=0, stage=0, flops=100),
                 wl.Task(id=1, stage=0, flops=100),
                 wl.Task(id=2, stage=0, flops=100)]
        deps = [(0, 1, 300), (0, 2, 100)]
        return wl.ComputeGraph(tasks=tasks, deps=deps)

    def test_single_core_workload_has_no_intra_edges(self):
        g = wl.gen_layered(layers=3, width=2, flops_per_task=10)
        mapping = wl.Mapping({t.id: 0 for t in g.tasks})
        mcg = build_mcg(g, mapping, arch4(), n_levels=1)
        assert mcg.edges == []
        assert len(mcg.core_nodes[0]) == 16

    def test_outgoing_weights_normalized(self):
        g = self.graph_two_consumers()
        mapping = wl.Mapping({0: 0, 1: 1, 2: 4})
        mcg = build_mcg(g, mapping, arch4(), n_levels=1)
        w = {(mcg.nodes[u], mcg.nodes[v]): wt for u, v, _lvl, wt, _l in mcg.edges}
        assert w[((0, 0), (1, 0))] == pytest.approx(0.75)
        assert w[((0, 0), (4, 0))] == pytest.approx(0.25)

    def test_weight_sums_to_one(self):
        g = wl.gen_layered(layers=4, width=32, fan_in=2, volume_per_edge=512,
                           flops_per_task=100)
        mapping = wl.round_robin_mapping(g, 16, stage_shift=[0, 1, 0, 4])
        mcg = build_mcg(g, mapping, arch4(), n_levels=2)
        for u, total in mcg.out_weight_sums().items():
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_cross_window_deps_ride_dram_nodes(self):
        tasks = [wl.Task(id=0, stage=0, flops=10), wl.Task(id=1, stage=1, flops=10)]
        g = wl.ComputeGraph(tasks=tasks, deps=[(0, 1, 64)])
        mapping = wl.Mapping({0: 0, 1: 5})
        mcg = build_mcg(g, mapping, arch4(), n_levels=2)
        kinds = [(mcg.nodes[u], mcg.nodes[v]) for u, v, _lvl, _w, link in mcg.edges]
        assert ((0, 0), ("dram", 0)) in kinds
        assert (("dram", 0), (5, 1)) in kinds
        # only dram edges cross levels, always forward
        for u, v, _lvl, _w, link in mcg.edges:
            lu, lv = mcg.nodes[u][1], mcg.nodes[v][1]
            if lu != lv:
                assert "dram" in (mcg.nodes[u][0], mcg.nodes[v][0])
                assert lv > lu

    def test_stage_partition_covers_all_levels(self):
        g = wl.gen_layered(layers=9, width=4, flops_per_task=10)
        mapping = wl.round_robin_mapping(g, 16)
        mcg = build_mcg(g, mapping, arch4(), n_levels=4)
        assert mcg.n_levels == 4
        assert set(mcg.level_of_stage.values()) == {0, 1, 2, 3}


def chain_mcg(n=4, weight=1.0, levels=1):
    """Simple hand-built layered graph for ranking properties."""
    nodes = [(i, 0) for i in range(n)]
    node_index = {node: i for i, node in enumerate(nodes)}
    edges = [(i, i + 1, 0, weight, (i, i + 1)) for i in range(n - 1)]
    in_edges = [[] for _ in nodes]
    for u, v, _lvl, w, _link in edges:
        in_edges[v].append((u, w))
    return Mcg(n_levels=levels, nodes=nodes, node_index=node_index, edges=edges,
               level_of_stage={0: 0}, core_nodes={0: list(range(n))},
               link_edges={0: list(range(len(edges)))}, in_edges=in_edges)


class TestFailRank:
    def test_isolated_node_fixed_point(self):
        cfg = FailRankConfig(damping=0.6)
        s0 = np.array([0.8, 0.0])
        s, iters, delta, converged = iterate_scores(s0, [[], []], cfg)
        assert converged
        assert s[0] == pytest.approx((1 - 0.6) * 0.8)
        assert s[1] == 0.0

    def test_edge_rule_direct_substitution(self):
        # w=1, s(u)=0.8, l0=0.5 with the canonical coefficients
        cfg = FailRankConfig()
        val = cfg.alpha * 1.0 + cfg.beta * 0.8 + cfg.gamma * 0.5
        assert val == pytest.approx(0.64)

    def test_symmetric_nodes_stay_equal(self):
        nodes = [(0, 0), (1, 0)]
        in_edges = [[(1, 1.0)], [(0, 1.0)]]
        cfg = FailRankConfig(damping=0.5, max_iter=50)
        s0 = np.array([0.6, 0.6])
        s = s0.copy()
        lam = cfg.damping
        for _ in range(20):
            s_new = (1 - lam) * s0 + lam * np.array([s[1], s[0]])
            assert s_new[0] == pytest.approx(s_new[1])
            s = s_new

    def test_geometric_convergence_bound(self):
        cfg = FailRankConfig(damping=0.6, tol=1e-6, max_iter=500)
        mcg = chain_mcg(6, weight=1.0)
        s0 = np.zeros(len(mcg.nodes))
        s0[0] = 1.0
        _s, iters, _delta, converged = iterate_scores(s0, mcg.in_edges, cfg)
        assert converged
        bound = math.ceil(math.log(cfg.tol) / math.log(cfg.damping)) + 3
        assert iters <= bound

    def test_score_range_preserved(self):
        cfg = FailRankConfig()
        mcg = chain_mcg(5, weight=1.0)
        s0 = np.array([1.0, 0.5, 0.2, 0.0, 0.9])
        s, _i, _d, converged = iterate_scores(s0, mcg.in_edges, cfg)
        assert converged
        assert np.all(s >= 0.0) and np.all(s <= 1.0)

    def test_rank_invariance_under_prior_scaling(self):
        cfg = FailRankConfig()
        mcg = chain_mcg(6, weight=0.8)
        rng = random.Random(4)
        s0 = np.array([rng.random() for _ in mcg.nodes])
        s_full, *_ = iterate_scores(s0, mcg.in_edges, cfg)
        s_scaled, *_ = iterate_scores(0.35 * s0, mcg.in_edges, cfg)
        assert list(np.argsort(s_full)) == list(np.argsort(s_scaled))
        assert np.allclose(s_scaled, 0.35 * s_full)

    def test_softmax_sums_to_one_per_level(self):
        for n in (1, 3, 17):
            probs = _softmax([0.1 * i for i in range(n)], 1.0)
            assert sum(probs) == pytest.approx(1.0, abs=1e-9)

    def test_non_convergence_flagged(self):
        cfg = FailRankConfig(damping=0.9, tol=1e-12, max_iter=2)
        mcg = chain_mcg(5)
        s0 = np.ones(len(mcg.nodes))
        _s, iters, _delta, converged = iterate_scores(s0, mcg.in_edges, cfg)
        assert iters == 2 and not converged

    def test_clean_run_produces_empty_ranking(self):
        mcg = chain_mcg(4)
        result = failrank(mcg, [], [])
        assert result.ranked == []
        assert result.converged

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            FailRankConfig(damping=1.0)
        with pytest.raises(ConfigError):
            FailRankConfig(alpha=-0.1)
        with pytest.raises(ConfigError):
            FailRankConfig(softmax_temp=0.0)


class TestCleanRunSoundness:
    def test_no_failure_no_randomness_yields_no_candidates(self):
        from failslow.platform import Platform
        from failslow.probes import emit, full_probe, instrument
        from failslow.sketch import make_report
        from failslow.tracer import detect_failslow

        arch = arch4()  # sigma 0, jitter off
        g = wl.gen_layered(layers=5, width=256, fan_in=2, flops_per_task=4096,
                           volume_per_edge=512)
        mapping = wl.round_robin_mapping(g, 16, stage_shift=[0, 1, 0, 4])
        probed = instrument(wl.lower(g, mapping, 16), full_probe())
        run = Platform(arch, seed=0).run(probed)
        out = emit(run.events, probed)
        obs = Observations.from_entries(make_report(list(out.sketches.values())).entries)
        report = detect_failslow(obs, g, mapping, arch)
        assert report.candidates == []
        assert report.core_candidates == [] and report.link_candidates == []


class TestSoftmaxNormalization:
    def test_node_and_edge_softmax_sum_per_level(self):
        g = wl.gen_layered(layers=4, width=32, fan_in=2, volume_per_edge=512,
                           flops_per_task=100)
        mapping = wl.round_robin_mapping(g, 16, stage_shift=[0, 1, 0, 4])
        mcg = build_mcg(g, mapping, arch4(), n_levels=2)
        result = failrank(mcg, [], [])
        node_sums = {}
        for (core, lvl), v in result.node_softmax.items():
            node_sums[lvl] = node_sums.get(lvl, 0.0) + v
        for lvl, total in node_sums.items():
            assert total == pytest.approx(1.0, abs=1e-9)
        edge_sums = {}
        for (lvl, _link), v in result.edge_softmax.items():
            edge_sums[lvl] = edge_sums.get(lvl, 0.0) + v
        for lvl, total in edge_sums.items():
            assert total == pytest.approx(1.0, abs=1e-9)
