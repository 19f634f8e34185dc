import random

import pytest
from hypothesis import given, settings, strategies as st

from failslow import workload as wl
from failslow.errors import ConfigError, DeadlockError
from failslow.platform import (ArchConfig, FailureSpec, Mesh, Platform, route_xy,
                               sample_compute_latency, sample_link_latency)
from failslow.probes import instrument, full_probe


def arch4(**kw):
    defaults = dict(mesh_width=4, mesh_height=4, core_mu=100.0, core_sigma=0.0,
                    link_bandwidth=64.0, link_shape=0.0, link_rate=1.0)
    defaults.update(kw)
    return ArchConfig(**defaults)


class TestRouting:
    def test_self_route_is_empty(self):
        assert route_xy(arch4(), 5, 5) == []

    def test_straight_x(self):
        assert route_xy(arch4(), 0, 2) == [(0, 1), (1, 2)]

    def test_x_before_y(self):
        # (0,0) -> (1,1): one X hop then one Y hop
        assert route_xy(arch4(), 0, 5) == [(0, 1), (1, 5)]

    def test_off_mesh_rejected(self):
        with pytest.raises(ConfigError):
            route_xy(arch4(), 0, 16)

    @given(src=st.integers(0, 15), dst=st.integers(0, 15))
    def test_path_length_is_manhattan_distance(self, src, dst):
        arch = arch4()
        path = route_xy(arch, src, dst)
        sx, sy = arch.coords(src)
        dx, dy = arch.coords(dst)
        assert len(path) == abs(sx - dx) + abs(sy - dy)
        # x resolves fully before y
        seen_y = False
        for (u, v) in path:
            is_y = abs(v - u) == arch.mesh_width
            if is_y:
                seen_y = True
            else:
                assert not seen_y

    def test_mesh_adjacency_is_four_neighbor(self):
        mesh = Mesh(arch4())
        assert mesh.n_links == 2 * (3 * 4) * 2  # 24 per direction pair
        for u, v in mesh.links:
            ux, uy = arch4().coords(u)
            vx, vy = arch4().coords(v)
            assert abs(ux - vx) + abs(uy - vy) == 1


class TestLatencyModels:
    def test_compute_degenerate_sigma(self):
        rng = random.Random(0)
        assert sample_compute_latency(1000, 100.0, 0.0, 1.0, rng) == 10.0

    def test_compute_under_failure(self):
        rng = random.Random(0)
        assert sample_compute_latency(1000, 100.0, 0.0, 0.1, rng) == pytest.approx(100.0)

    def test_compute_monte_carlo_mean(self):
        rng = random.Random(42)
        mu, sigma, flops = 100.0, 5.0, 1000.0
        n = 100_000
        mean = sum(sample_compute_latency(flops, mu, sigma, 1.0, rng)
                   for _ in range(n)) / n
        assert mean == pytest.approx(flops / mu, rel=0.02)

    def test_compute_capacity_truncated(self):
        rng = random.Random(7)
        # huge sigma would otherwise produce non-positive capacity
        for _ in range(2000):
            lat = sample_compute_latency(1000, 100.0, 500.0, 1.0, rng)
            assert 0 < lat <= 1000 / 10.0

    def test_link_deterministic_part(self):
        rng = random.Random(0)
        assert sample_link_latency(128, 64.0, 1.0, 0.0, 1.0, rng) == 2.0

    def test_link_under_failure(self):
        rng = random.Random(0)
        assert sample_link_latency(128, 64.0, 0.1, 0.0, 1.0, rng) == pytest.approx(20.0)

    def test_link_jitter_mean(self):
        rng = random.Random(3)
        shape, rate = 2.0, 0.5
        n = 100_000
        mean = sum(sample_link_latency(128, 64.0, 1.0, shape, rate, rng)
                   for _ in range(n)) / n
        assert mean == pytest.approx(2.0 + shape / rate, rel=0.02)


class TestInjection:
    def test_no_failures_means_unit_multiplier(self):
        p = Platform(arch4(), [])
        for t in (0.0, 1e6, 1e9):
            assert p.core_multiplier(3, t) == 1.0
            assert p.link_multiplier((0, 1), t) == 1.0

    def test_half_open_window(self):
        spec = FailureSpec(location=("core", 6), start_s=1.0, duration_s=2.0, slowdown=10.0)
        p = Platform(arch4(), [spec])
        hz = arch4().clock_hz
        assert p.core_multiplier(6, 0.999 * hz) == 1.0
        assert p.core_multiplier(6, 1.0 * hz) == pytest.approx(0.1)
        assert p.core_multiplier(6, 2.999 * hz) == pytest.approx(0.1)
        assert p.core_multiplier(6, 3.0 * hz) == 1.0

    def test_overlap_composes_multiplicatively(self):
        specs = [FailureSpec(location=("link", (0, 1)), start_s=0.0, duration_s=2.0, slowdown=2.0),
                 FailureSpec(location=("link", (0, 1)), start_s=1.0, duration_s=2.0, slowdown=2.0)]
        p = Platform(arch4(), specs)
        hz = arch4().clock_hz
        assert p.link_multiplier((0, 1), 0.5 * hz) == pytest.approx(0.5)
        assert p.link_multiplier((0, 1), 1.5 * hz) == pytest.approx(0.25)
        assert p.link_multiplier((0, 1), 2.5 * hz) == pytest.approx(0.5)

    def test_router_failure_covers_incident_links(self):
        spec = FailureSpec(location=("router", 5), start_s=0.0, duration_s=1.0, slowdown=4.0)
        p = Platform(arch4(), [spec])
        for link in ((5, 6), (6, 5), (5, 1), (1, 5), (5, 4), (4, 5), (5, 9), (9, 5)):
            assert p.link_multiplier(link, 0.0) == pytest.approx(0.25)
        assert p.link_multiplier((0, 1), 0.0) == 1.0

    def test_off_mesh_location_rejected_at_load(self):
        with pytest.raises(ConfigError):
            Platform(arch4(), [FailureSpec(location=("link", (0, 9)),
                                           start_s=0.0, duration_s=1.0, slowdown=2.0)])

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            FailureSpec(location=("core", 0), start_s=-1.0, duration_s=1.0, slowdown=2.0)
        with pytest.raises(ConfigError):
            FailureSpec(location=("core", 0), start_s=0.0, duration_s=0.0, slowdown=2.0)
        with pytest.raises(ConfigError):
            FailureSpec(location=("core", 0), start_s=0.0, duration_s=1.0, slowdown=0.5)


def lowered(graph, mapping, arch, plan=()):
    program = wl.lower(graph, mapping, arch.n_cores)
    return instrument(program, plan)


class TestRun:
    def test_single_comp_latency(self):
        arch = arch4()
        g = wl.ComputeGraph(tasks=[wl.Task(id=0, stage=0, flops=1000)], deps=[])
        run = Platform(arch, seed=0).run(lowered(g, wl.Mapping({0: 0}), arch))
        assert run.total_cycles == pytest.approx(1000 / 100.0)

    def test_single_comp_with_probe_cost(self):
        arch = arch4()
        g = wl.ComputeGraph(tasks=[wl.Task(id=0, stage=0, flops=1000)], deps=[])
        run = Platform(arch, seed=0).run(lowered(g, wl.Mapping({0: 0}), arch, full_probe()))
        assert run.total_cycles == pytest.approx(10.0 + arch.probe_clock_cycles)

    def test_determinism_bit_identical(self):
        arch = arch4(core_sigma=5.0, link_shape=1.0, link_rate=0.5)
        g = wl.gen_layered(layers=4, width=32, fan_in=2, flops_per_task=2048,
                           volume_per_edge=512)
        probed = lowered(g, wl.round_robin_mapping(g, 16), arch, full_probe())
        a = Platform(arch, seed=9).run(probed)
        b = Platform(arch, seed=9).run(probed)
        assert a.total_cycles == b.total_cycles
        assert a.events == b.events

    def test_different_seed_changes_trace(self):
        arch = arch4(core_sigma=5.0)
        g = wl.gen_layered(layers=2, width=16, flops_per_task=2048)
        probed = lowered(g, wl.round_robin_mapping(g, 16), arch, full_probe())
        a = Platform(arch, seed=1).run(probed)
        b = Platform(arch, seed=2).run(probed)
        assert a.total_cycles != b.total_cycles

    def test_causality_receive_after_send_plus_path(self):
        arch = arch4()
        g = wl.ComputeGraph(
            tasks=[wl.Task(id=0, stage=0, flops=1000), wl.Task(id=1, stage=1, flops=1000)],
            deps=[(0, 1, 128)])
        probed = lowered(g, wl.Mapping({0: 0, 1: 2}), arch, full_probe())
        run = Platform(arch, seed=0).run(probed)
        comm = [e for e in run.events if e.kind == wl.COMM][0]
        hops = 2
        assert comm.end >= comm.start + hops * 128 / 64.0
        # comp 10 + post 10, send pre 10, 2 hops x 2cy, delivery post 10,
        # then comp 10 + post 10
        assert run.total_cycles == pytest.approx(10 + 10 + 10 + 4 + 10 + 10 + 10)

    def test_restoration_after_failure_window(self):
        arch = arch4()
        tasks = [wl.Task(id=i, stage=i, flops=1000) for i in range(4)]
        deps = [(i, i + 1, 64) for i in range(3)]
        g = wl.ComputeGraph(tasks=tasks, deps=deps)
        mapping = wl.Mapping({i: 0 for i in range(4)})
        probed = lowered(g, mapping, arch, full_probe())
        # failure ends (in cycles) before the third task starts
        spec = FailureSpec(location=("core", 0), start_s=0.0, duration_s=25e-9, slowdown=10.0)
        run = Platform(arch, [spec], seed=0).run(probed)
        comps = sorted((e for e in run.events if e.kind == wl.COMP), key=lambda e: e.start)
        assert comps[0].duration == pytest.approx(100.0)   # slowed
        assert comps[-1].duration == pytest.approx(10.0)   # restored

    def test_monotone_degradation(self):
        arch = arch4()  # sigma 0, jitter off: all randomness disabled
        g = wl.gen_layered(layers=3, width=16, fan_in=2, flops_per_task=4096,
                           volume_per_edge=1024)
        probed = lowered(g, wl.round_robin_mapping(g, 16), arch, full_probe())
        base = Platform(arch, seed=0).run(probed).total_cycles
        for loc in (("core", 3), ("link", (1, 2)), ("router", 5)):
            spec = FailureSpec(location=loc, start_s=0.0, duration_s=1.0, slowdown=3.0)
            total = Platform(arch, [spec], seed=0).run(probed).total_cycles
            assert total >= base

    def test_link_serialization(self):
        # two transfers over the same link cannot overlap
        arch = arch4()
        tasks = [wl.Task(id=i, stage=0, flops=100) for i in range(2)]
        tasks += [wl.Task(id=i + 2, stage=1, flops=100) for i in range(2)]
        g = wl.ComputeGraph(tasks=tasks, deps=[(0, 2, 6400), (1, 3, 6400)])
        mapping = wl.Mapping({0: 0, 1: 0, 2: 1, 3: 1})
        probed = lowered(g, mapping, arch, full_probe())
        run = Platform(arch, seed=0).run(probed)
        comms = sorted((e for e in run.events if e.kind == wl.COMM), key=lambda e: e.start)
        assert len(comms) == 2
        service = 6400 / 64.0
        # second transfer finishes a full service time after the first
        assert comms[1].end >= comms[0].end + service

    def test_io_task_latency_uses_bandwidth(self):
        arch = arch4()
        g = wl.ComputeGraph(tasks=[wl.Task(id=0, stage=0, flops=640, kind=wl.IO)],
                            deps=[])
        run = Platform(arch, seed=0).run(lowered(g, wl.Mapping({0: 0}), arch))
        assert run.total_cycles == pytest.approx(640 / 64.0)

    def test_deadlock_detection(self):
        arch = arch4()
        g = wl.ComputeGraph(
            tasks=[wl.Task(id=0, stage=0, flops=100), wl.Task(id=1, stage=1, flops=100)],
            deps=[(0, 1, 64)])
        probed = lowered(g, wl.Mapping({0: 0, 1: 1}), arch)
        # drop the send instruction to orphan the receive
        probed.instructions[0] = [i for i in probed.instructions[0] if i.kind != wl.COMM]
        probed.costs[0] = probed.costs[0][:1]
        with pytest.raises(DeadlockError, match="core 1"):
            Platform(arch, seed=0).run(probed)


class TestArchValidation:
    def test_positive_dimensions(self):
        with pytest.raises(ConfigError):
            ArchConfig(mesh_width=0, mesh_height=4)

    def test_positive_rates(self):
        with pytest.raises(ConfigError):
            ArchConfig(core_mu=0.0)

    def test_seconds_cycles_roundtrip(self):
        arch = arch4()
        assert arch.seconds_to_cycles(1.5e-3) == pytest.approx(1.5e6)
        assert arch.cycles_to_seconds(arch.seconds_to_cycles(0.25)) == pytest.approx(0.25)
