import pytest
from hypothesis import given, settings, strategies as st

from failslow import workload as wl
from failslow.errors import ConfigError


def chain(volume=128):
    tasks = [wl.Task(id=0, stage=0, flops=100), wl.Task(id=1, stage=1, flops=100)]
    return wl.ComputeGraph(tasks=tasks, deps=[(0, 1, volume)])


class TestGraphValidation:
    def test_cycle_rejected(self):
        tasks = [wl.Task(id=0, stage=0, flops=1), wl.Task(id=1, stage=0, flops=1)]
        with pytest.raises(ConfigError, match="cycle"):
            wl.ComputeGraph(tasks=tasks, deps=[(0, 1, 1), (1, 0, 1)])

    def test_unknown_endpoint_rejected(self):
        with pytest.raises(ConfigError, match="unknown task"):
            wl.ComputeGraph(tasks=[wl.Task(id=0, stage=0, flops=1)], deps=[(0, 9, 1)])

    def test_comp_task_needs_flops(self):
        with pytest.raises(ConfigError):
            wl.Task(id=0, stage=0, flops=0)

    def test_negative_stage_rejected(self):
        with pytest.raises(ConfigError):
            wl.Task(id=0, stage=-1, flops=1)


class TestLower:
    def test_same_core_chain_has_no_comm(self):
        g = chain()
        program = wl.lower(g, wl.Mapping({0: 0, 1: 0}), n_cores=4)
        kinds = [i.kind for instrs in program.values() for i in instrs]
        assert kinds.count(wl.COMP) == 2
        assert kinds.count(wl.COMM) == 0

    def test_cross_core_chain_emits_matched_pair(self):
        g = chain(volume=128)
        program = wl.lower(g, wl.Mapping({0: 0, 1: 5}), n_cores=16)
        sends = [i for i in program[0] if i.kind == wl.COMM]
        recvs = [i for i in program[5] if i.kind == wl.COMM]
        assert len(sends) == 1 and sends[0].role == wl.SEND
        assert sends[0].src == 0 and sends[0].dst == 5 and sends[0].volume == 128
        assert len(recvs) == 1 and recvs[0].role == wl.RECV
        assert recvs[0].ident == sends[0].ident  # paired by dep id
        assert [i.kind for i in program[0]] == [wl.COMP, wl.COMM]
        assert [i.kind for i in program[5]] == [wl.COMM, wl.COMP]

    def test_empty_graph(self):
        g = wl.ComputeGraph(tasks=[], deps=[])
        program = wl.lower(g, wl.Mapping({}), n_cores=4)
        assert all(not instrs for instrs in program.values())

    def test_unmapped_task_rejected(self):
        with pytest.raises(ConfigError, match="unmapped"):
            wl.lower(chain(), wl.Mapping({0: 0}), n_cores=4)

    def test_off_mesh_core_rejected(self):
        with pytest.raises(ConfigError, match="mesh"):
            wl.lower(chain(), wl.Mapping({0: 0, 1: 99}), n_cores=4)


class TestGenerators:
    def test_tree_depth_one(self):
        g = wl.gen_binary_tree(1)
        assert g.n_tasks == 1 and not g.deps

    def test_tree_depth_three_counts(self):
        g = wl.gen_binary_tree(3)
        assert g.n_tasks == 7
        assert len(g.deps) == 6

    def test_tree_depth_four_stages(self):
        g = wl.gen_binary_tree(4)
        assert g.n_tasks == 15
        assert len({t.stage for t in g.tasks}) == 4

    def test_tree_rejects_zero_depth(self):
        with pytest.raises(ConfigError):
            wl.gen_binary_tree(0)

    def test_tree_children_feed_parents(self):
        g = wl.gen_binary_tree(3)
        for src, dst, _vol in g.deps:
            assert g.task(src).stage == g.task(dst).stage - 1

    def test_layered_single_layer_has_no_deps(self):
        g = wl.gen_layered(layers=1, width=8)
        assert not g.deps

    def test_layered_two_by_two_fan_two(self):
        g = wl.gen_layered(layers=2, width=2, fan_in=2)
        assert g.n_tasks == 4
        assert len(g.deps) == 4

    def test_layered_three_by_four_fan_one(self):
        g = wl.gen_layered(layers=3, width=4, fan_in=1)
        assert g.n_tasks == 12
        assert len(g.deps) == 8

    def test_layered_fan_in_bounds(self):
        with pytest.raises(ConfigError):
            wl.gen_layered(layers=2, width=2, fan_in=3)

    @given(depth=st.integers(1, 8))
    def test_tree_is_deterministic(self, depth):
        a = wl.gen_binary_tree(depth)
        b = wl.gen_binary_tree(depth)
        assert a.tasks == b.tasks and a.deps == b.deps

    @given(layers=st.integers(1, 6), width=st.integers(1, 12))
    def test_layered_is_deterministic(self, layers, width):
        fan = min(2, width)
        a = wl.gen_layered(layers, width, fan_in=fan)
        b = wl.gen_layered(layers, width, fan_in=fan)
        assert a.tasks == b.tasks and a.deps == b.deps


@st.composite
def random_dag(draw):
    n = draw(st.integers(2, 24))
    tasks = [wl.Task(id=i, stage=draw(st.integers(0, 4)), flops=draw(st.integers(1, 100)))
             for i in range(n)]
    deps = []
    for dst in range(1, n):
        for src in draw(st.lists(st.integers(0, dst - 1), max_size=3, unique=True)):
            deps.append((src, dst, draw(st.integers(1, 512))))
    return wl.ComputeGraph(tasks=tasks, deps=deps)


class TestLoweringProperties:
    @given(random_dag(), st.integers(1, 16))
    @settings(max_examples=60, deadline=None)
    def test_volume_conservation(self, graph, n_cores):
        mapping = wl.round_robin_mapping(graph, n_cores)
        program = wl.lower(graph, mapping, n_cores)
        sent = sum(i.volume for instrs in program.values() for i in instrs
                   if i.kind == wl.COMM and i.role == wl.SEND)
        expected = sum(vol for src, dst, vol in graph.deps
                       if mapping.core_of(src) != mapping.core_of(dst))
        assert sent == expected

    @given(random_dag(), st.integers(1, 16))
    @settings(max_examples=60, deadline=None)
    def test_topological_order_per_core(self, graph, n_cores):
        mapping = wl.round_robin_mapping(graph, n_cores)
        program = wl.lower(graph, mapping, n_cores)
        position = {}
        for core, instrs in program.items():
            for i in instrs:
                if i.kind in (wl.COMP, wl.IO):
                    position[i.ident] = (core, i.index)
        for src, dst, _vol in graph.deps:
            c_src, p_src = position[src]
            c_dst, p_dst = position[dst]
            if c_src == c_dst:
                assert p_src < p_dst

    @given(random_dag(), st.integers(1, 16))
    @settings(max_examples=40, deadline=None)
    def test_sends_follow_producer_receives_precede_consumer(self, graph, n_cores):
        mapping = wl.round_robin_mapping(graph, n_cores)
        program = wl.lower(graph, mapping, n_cores)
        by_core = {core: instrs for core, instrs in program.items()}
        for core, instrs in by_core.items():
            task_pos = {i.ident: i.index for i in instrs if i.kind in (wl.COMP, wl.IO)}
            for i in instrs:
                if i.kind != wl.COMM:
                    continue
                src, dst, _ = graph.deps[i.ident]
                if i.role == wl.SEND:
                    assert i.index > task_pos[src]
                else:
                    assert i.index < task_pos[dst]


class TestMappings:
    def test_round_robin_spreads_within_stage(self):
        g = wl.gen_layered(layers=2, width=8)
        m = wl.round_robin_mapping(g, 4)
        layer0 = [m.core_of(t.id) for t in g.tasks if t.stage == 0]
        assert layer0 == [0, 1, 2, 3, 0, 1, 2, 3]

    def test_stage_shift_schedule(self):
        g = wl.gen_layered(layers=3, width=4)
        m = wl.round_robin_mapping(g, 8, stage_shift=[0, 3, 5])
        firsts = [m.core_of(stage * 4) for stage in range(3)]
        assert firsts == [0, 3, 5]

    def test_subtree_mapping_keeps_leaf_blocks_local(self):
        g = wl.gen_binary_tree(6)
        m = wl.subtree_mapping(g, 4)
        cross = sum(1 for s, d, _ in g.deps if m.core_of(s) != m.core_of(d))
        assert cross <= 8  # only near-root deps leave a block
        assert m.used_cores() == {0, 1, 2, 3}

    def test_subtree_mapping_rejects_non_tree(self):
        g = wl.gen_layered(layers=2, width=3)
        with pytest.raises(ConfigError):
            wl.subtree_mapping(g, 4)
