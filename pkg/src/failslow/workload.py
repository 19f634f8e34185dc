"""Dataflow workloads: task graphs, task-to-core mappings, and the
lowering pass that turns a mapped graph into per-core instruction streams.

A workload is a DAG of tasks. Lowering walks the DAG in topological
order and emits, per core, ``comp``/``io`` instructions for the tasks
mapped there plus matched ``send``/``recv`` pairs for every dependency
whose endpoints live on different cores. Sends and receives are paired
by dependency id, never by arrival order, so simulation stays
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigError

COMP = "comp"
COMM = "comm"
IO = "io"

SEND = "send"
RECV = "recv"


@dataclass(frozen=True)
class Task:
    id: int
    stage: int
    flops: int
    kind: str = COMP  # "comp" or "io"; io tasks carry payload bytes in flops

    def __post_init__(self):
        if self.stage < 0:
            raise ConfigError(f"task {self.id}: stage must be non-negative")
        if self.kind == COMP and self.flops <= 0:
            raise ConfigError(f"task {self.id}: comp task needs flops > 0")
        if self.kind not in (COMP, IO):
            raise ConfigError(f"task {self.id}: unknown kind {self.kind!r}")


@dataclass
class ComputeGraph:
    """A DAG of tasks with data-volume edges.

    ``deps`` entries are ``(producer_id, consumer_id, volume_bytes)``.
    """

    tasks: list[Task]
    deps: list[tuple[int, int, int]]
    _by_id: dict[int, Task] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {t.id: t for t in self.tasks}
        if len(self._by_id) != len(self.tasks):
            raise ConfigError("duplicate task ids")
        for i, (src, dst, vol) in enumerate(self.deps):
            if src not in self._by_id or dst not in self._by_id:
                raise ConfigError(f"dep {i} references unknown task ({src}, {dst})")
            if vol <= 0:
                raise ConfigError(f"dep {i}: volume must be positive, got {vol}")
        self.topo_order()  # raises on cycles

    def task(self, tid: int) -> Task:
        return self._by_id[tid]

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def stages(self) -> list[int]:
        return sorted({t.stage for t in self.tasks})

    def topo_order(self) -> list[int]:
        """Kahn's algorithm, smallest-id-first for determinism."""
        indeg = {t.id: 0 for t in self.tasks}
        succs: dict[int, list[int]] = {t.id: [] for t in self.tasks}
        for src, dst, _ in self.deps:
            indeg[dst] += 1
            succs[src].append(dst)
        import heapq

        ready = [tid for tid, d in sorted(indeg.items()) if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            tid = heapq.heappop(ready)
            order.append(tid)
            for nxt in succs[tid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    heapq.heappush(ready, nxt)
        if len(order) != len(self.tasks):
            raise ConfigError("dependency graph contains a cycle")
        return order


@dataclass(frozen=True)
class Mapping:
    """Total function task id -> core id."""

    assignment: dict[int, int]

    def core_of(self, tid: int) -> int:
        return self.assignment[tid]

    def validate(self, graph: ComputeGraph, n_cores: int) -> None:
        for t in graph.tasks:
            core = self.assignment.get(t.id)
            if core is None:
                raise ConfigError(f"task {t.id} is unmapped")
            if not 0 <= core < n_cores:
                raise ConfigError(f"task {t.id} mapped to core {core}, mesh has {n_cores}")

    def used_cores(self) -> set[int]:
        return set(self.assignment.values())


@dataclass(frozen=True)
class Instruction:
    """One lowered per-core instruction.

    ``kind`` is comp/comm/io. Comm instructions come in send/recv pairs
    matched by ``ident`` (the dep id); comp/io use ``ident`` for the task
    id. ``index`` is the program-order position on the owning core.
    """

    kind: str
    ident: int
    stage: int
    index: int
    flops: int = 0
    volume: int = 0
    src: int = -1
    dst: int = -1
    role: str = ""


def lower(graph: ComputeGraph, mapping: Mapping, n_cores: int) -> dict[int, list[Instruction]]:
    """Lower a mapped graph to per-core instruction lists.

    Cross-core deps become a send on the producer core and a matching
    receive on the consumer core; intra-core deps survive only as the
    ordering implied by topological emission.
    """
    mapping.validate(graph, n_cores)
    program: dict[int, list[Instruction]] = {c: [] for c in range(n_cores)}

    incoming: dict[int, list[int]] = {t.id: [] for t in graph.tasks}
    outgoing: dict[int, list[int]] = {t.id: [] for t in graph.tasks}
    for dep_id, (src, dst, _vol) in enumerate(graph.deps):
        incoming[dst].append(dep_id)
        outgoing[src].append(dep_id)

    def emit(core: int, **kw) -> None:
        program[core].append(Instruction(index=len(program[core]), **kw))

    for tid in graph.topo_order():
        task = graph.task(tid)
        core = mapping.core_of(tid)
        for dep_id in incoming[tid]:
            psrc, _, vol = graph.deps[dep_id]
            src_core = mapping.core_of(psrc)
            if src_core == core:
                continue
            emit(core, kind=COMM, ident=dep_id, stage=graph.task(psrc).stage,
                 volume=vol, src=src_core, dst=core, role=RECV)
        if task.kind == COMP:
            emit(core, kind=COMP, ident=tid, stage=task.stage, flops=task.flops)
        else:
            emit(core, kind=IO, ident=tid, stage=task.stage, volume=task.flops)
        for dep_id in outgoing[tid]:
            _, cdst, vol = graph.deps[dep_id]
            dst_core = mapping.core_of(cdst)
            if dst_core == core:
                continue
            emit(core, kind=COMM, ident=dep_id, stage=task.stage,
                 volume=vol, src=core, dst=dst_core, role=SEND)
    return program


def _per_stage(value: int | Sequence[int], stage: int, name: str) -> int:
    if isinstance(value, int):
        v = value
    else:
        v = value[stage % len(value)]
    if v <= 0:
        raise ConfigError(f"{name} must be positive, got {v}")
    return v


def gen_binary_tree(depth: int, flops_per_node: int | Sequence[int] = 1024,
                    volume_per_edge: int | Sequence[int] = 256) -> ComputeGraph:
    """Bottom-up binary-tree reduction: 2^depth - 1 tasks, leaves at stage 0.

    Node ids follow heap order (root 0, children 2i+1, 2i+2); each
    non-leaf depends on its two children, so data flows leaf to root.
    """
    if depth < 1:
        raise ConfigError(f"tree depth must be >= 1, got {depth}")
    tasks = []
    deps = []
    n = (1 << depth) - 1
    for i in range(n):
        level = (i + 1).bit_length() - 1  # root at tree level 0
        stage = depth - 1 - level  # leaves execute first
        tasks.append(Task(id=i, stage=stage, flops=_per_stage(flops_per_node, stage, "flops")))
    for i in range(n):
        left, right = 2 * i + 1, 2 * i + 2
        if left < n:
            stage = tasks[left].stage
            deps.append((left, i, _per_stage(volume_per_edge, stage, "volume")))
        if right < n:
            stage = tasks[right].stage
            deps.append((right, i, _per_stage(volume_per_edge, stage, "volume")))
    return ComputeGraph(tasks=tasks, deps=deps)


def gen_layered(layers: int, width: int, fan_in: int = 1,
                flops_per_task: int | Sequence[int] = 1024,
                volume_per_edge: int | Sequence[int] = 256) -> ComputeGraph:
    """Layered DNN-like graph: ``layers`` x ``width`` tasks, stage = layer.

    Task ``j`` of layer ``l`` consumes from tasks ``(j + k) % width`` of
    layer ``l - 1`` for ``k in range(fan_in)``. No RNG: generators are
    pure functions of their parameters.
    """
    if layers < 1 or width < 1:
        raise ConfigError(f"layers and width must be >= 1, got {layers}, {width}")
    if fan_in < 1 or fan_in > width:
        raise ConfigError(f"fan_in must be in [1, width], got {fan_in}")
    tasks = []
    deps = []
    for l in range(layers):
        flops = _per_stage(flops_per_task, l, "flops")
        for j in range(width):
            tasks.append(Task(id=l * width + j, stage=l, flops=flops))
    for l in range(1, layers):
        vol = _per_stage(volume_per_edge, l, "volume")
        for j in range(width):
            for k in range(fan_in):
                src = (l - 1) * width + (j + k) % width
                deps.append((src, l * width + j, vol))
    return ComputeGraph(tasks=tasks, deps=deps)


def round_robin_mapping(graph: ComputeGraph, n_cores: int,
                        stage_shift: int | Sequence[int] = 1) -> Mapping:
    """Round-robin tasks within each stage across all cores.

    ``stage_shift`` rotates each stage's start core. An integer shifts
    by ``stage * stage_shift``; a sequence is indexed by stage (mod its
    length), which lets consecutive layers alternate offsets so that
    cross-core transfers exercise links in all four mesh directions. A
    shift of 0 keeps aligned chains core-local.
    """
    if n_cores < 1:
        raise ConfigError("n_cores must be >= 1")
    assignment: dict[int, int] = {}
    by_stage: dict[int, list[int]] = {}
    for t in graph.tasks:
        by_stage.setdefault(t.stage, []).append(t.id)
    for rank, (stage, tids) in enumerate(sorted(by_stage.items())):
        if isinstance(stage_shift, int):
            base = (stage * stage_shift) % n_cores
        else:
            base = stage_shift[rank % len(stage_shift)] % n_cores
        for i, tid in enumerate(sorted(tids)):
            assignment[tid] = (base + i) % n_cores
    return Mapping(assignment)


def subtree_mapping(graph: ComputeGraph, n_cores: int) -> Mapping:
    """Locality mapping for ``gen_binary_tree`` graphs.

    Each node owns a contiguous leaf range in heap order; nodes whose
    range fits a single core block stay on that core, the few top nodes
    spanning blocks are spread round-robin. Keeps almost all tree deps
    core-local, so cross-core traffic concentrates near the root.
    """
    n = graph.n_tasks
    depth = n.bit_length()
    if (1 << depth) - 1 != n:
        raise ConfigError("subtree_mapping requires a full binary tree graph")
    n_leaves = 1 << (depth - 1)
    first_leaf = n_leaves - 1
    assignment: dict[int, int] = {}

    def leaf_range(i: int) -> tuple[int, int]:
        lo = hi = i
        while 2 * lo + 1 < n:
            lo = 2 * lo + 1
            hi = 2 * hi + 2
        return lo - first_leaf, hi - first_leaf

    for i in range(n):
        lo, hi = leaf_range(i)
        c_lo = lo * n_cores // n_leaves
        c_hi = hi * n_cores // n_leaves
        assignment[i] = c_lo if c_lo == c_hi else i % n_cores
    return Mapping(assignment)
