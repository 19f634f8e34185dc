"""2D-mesh many-core platform: topology, XY routing, stochastic latency
models, fail-slow injection, and a deterministic event-driven simulator.

Performance variability follows the standard two-distribution model:
per-core compute capacity is drawn from a normal distribution (one draw
per comp instruction, truncated below at mu/10 so capacity stays
physical), and per-hop link latency adds Gamma-distributed jitter on top
of the volume/bandwidth service time.

Failures are applied by a monitoring overlay: during ``[start, start +
duration)`` the target component's performance multiplier is divided by
the slowdown factor, and composes multiplicatively when windows overlap.
A "router" failure slows every link incident to that router's core.

The simulator is event-driven and single-owner. Cores batch through
their non-blocking instructions (comp, io, send) in local time; only
link occupancy and message delivery go through the global event heap,
which is ordered by (time, sequence) so equal inputs and seed always
reproduce the identical trace.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass

from .errors import ConfigError, DeadlockError
from .probes import ProbedProgram, TraceEvent
from . import workload as wl


@dataclass(frozen=True)
class ArchConfig:
    """Mesh dimensions, distribution parameters, and cost constants."""

    mesh_width: int = 4
    mesh_height: int = 4
    core_mu: float = 64.0       # nominal FLOPs per cycle
    core_sigma: float = 0.0     # stddev of per-instruction capacity draws
    link_bandwidth: float = 64.0  # bytes per cycle
    link_shape: float = 0.0     # Gamma shape; 0 disables jitter
    link_rate: float = 1.0      # Gamma rate; jitter mean = shape / rate
    sram_bytes: int = 65536
    probe_clock_cycles: int = 10
    clock_hz: float = 1e9
    offload_cycles: int = 0     # charged per SRAM offload in list mode

    def __post_init__(self):
        if self.mesh_width < 1 or self.mesh_height < 1:
            raise ConfigError("mesh dimensions must be positive")
        for name in ("core_mu", "link_bandwidth", "link_rate", "clock_hz"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("core_sigma", "link_shape", "probe_clock_cycles", "offload_cycles"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.sram_bytes <= 0:
            raise ConfigError("sram_bytes must be positive")

    @property
    def n_cores(self) -> int:
        return self.mesh_width * self.mesh_height

    def coords(self, core: int) -> tuple[int, int]:
        if not 0 <= core < self.n_cores:
            raise ConfigError(f"core {core} not on {self.mesh_width}x{self.mesh_height} mesh")
        return core % self.mesh_width, core // self.mesh_width

    def core_at(self, x: int, y: int) -> int:
        return y * self.mesh_width + x

    def seconds_to_cycles(self, s: float) -> float:
        return s * self.clock_hz

    def cycles_to_seconds(self, c: float) -> float:
        return c / self.clock_hz


class Mesh:
    """Directed 4-neighbor mesh adjacency with dense link ids."""

    def __init__(self, arch: ArchConfig):
        self.arch = arch
        self.links: list[tuple[int, int]] = []
        self.link_id: dict[tuple[int, int], int] = {}
        w, h = arch.mesh_width, arch.mesh_height
        for core in range(arch.n_cores):
            x, y = core % w, core // w
            for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                if 0 <= nx < w and 0 <= ny < h:
                    n = ny * w + nx
                    self.link_id[(core, n)] = len(self.links)
                    self.links.append((core, n))
        self._routes: dict[tuple[int, int], tuple[int, ...]] = {}

    @property
    def n_links(self) -> int:
        return len(self.links)

    def incident_links(self, core: int) -> list[int]:
        return [i for i, (u, v) in enumerate(self.links) if u == core or v == core]

    def route(self, src: int, dst: int) -> tuple[int, ...]:
        """XY route as a tuple of link ids (cached)."""
        key = (src, dst)
        hit = self._routes.get(key)
        if hit is not None:
            return hit
        path = tuple(self.link_id[(u, v)] for u, v in route_xy(self.arch, src, dst))
        self._routes[key] = path
        return path


def route_xy(arch: ArchConfig, src: int, dst: int) -> list[tuple[int, int]]:
    """Deterministic XY route: resolve the X dimension first, then Y.

    Returns the ordered list of directed (core, core) hops; empty when
    src == dst. Path length always equals the Manhattan distance.
    """
    sx, sy = arch.coords(src)
    dx, dy = arch.coords(dst)
    hops = []
    x, y = sx, sy
    while x != dx:
        nx = x + (1 if dx > x else -1)
        hops.append((arch.core_at(x, y), arch.core_at(nx, y)))
        x = nx
    while y != dy:
        ny = y + (1 if dy > y else -1)
        hops.append((arch.core_at(x, y), arch.core_at(x, ny)))
        y = ny
    return hops


@dataclass(frozen=True)
class FailureSpec:
    """One injected fail-slow window.

    ``location`` is ``("core", id)``, ``("link", (u, v))``, or
    ``("router", id)``; a router failure degrades all links incident to
    that core. The window is half-open: ``[start, start + duration)``.
    """

    location: tuple
    start_s: float
    duration_s: float
    slowdown: float

    def __post_init__(self):
        kind = self.location[0]
        if kind not in ("core", "link", "router"):
            raise ConfigError(f"unknown failure location kind {kind!r}")
        if self.start_s < 0:
            raise ConfigError("failure start must be >= 0")
        if self.duration_s <= 0:
            raise ConfigError("failure duration must be > 0")
        if self.slowdown < 1:
            raise ConfigError("slowdown must be >= 1")

    @property
    def kind(self) -> str:
        return self.location[0]

    @property
    def target(self):
        return self.location[1]

    def window_s(self) -> tuple[float, float]:
        return self.start_s, self.start_s + self.duration_s


def sample_compute_latency(flops: float, mu: float, sigma: float,
                           multiplier: float, rng: random.Random) -> float:
    """Cycles for a comp instruction: flops / (capacity draw x multiplier).

    With sigma = 0 the draw degenerates to mu and no RNG is consumed, so
    sigma = 0 doubles as the "randomness disabled" switch.
    """
    if sigma > 0:
        capacity = max(rng.gauss(mu, sigma), mu / 10.0)
    else:
        capacity = mu
    return flops / (capacity * multiplier)


def sample_link_latency(volume: float, bandwidth: float, multiplier: float,
                        shape: float, rate: float, rng: random.Random) -> float:
    """Cycles for one hop: volume / (bandwidth x multiplier) + Gamma jitter."""
    latency = volume / (bandwidth * multiplier)
    if shape > 0:
        latency += rng.gammavariate(shape, 1.0 / rate)
    return latency


class _Schedule:
    """Piecewise multiplier for one component: product of active windows."""

    __slots__ = ("windows",)

    def __init__(self):
        self.windows: list[tuple[float, float, float]] = []

    def add(self, start: float, end: float, slowdown: float) -> None:
        self.windows.append((start, end, 1.0 / slowdown))

    def at(self, t: float) -> float:
        m = 1.0
        for start, end, mult in self.windows:
            if start <= t < end:
                m *= mult
        return m


@dataclass
class RunResult:
    """Output of one simulation: the trace plus timing accounting."""

    events: list[TraceEvent]
    total_cycles: float
    probe_cycles: float
    offload_count: int
    offload_cycles: float
    seed: int
    n_instructions: int

    def events_by_core(self) -> dict[int, list[TraceEvent]]:
        out: dict[int, list[TraceEvent]] = {}
        for ev in self.events:
            out.setdefault(ev.core, []).append(ev)
        return out


# instruction opcodes compiled for the inner loop
_OP_COMP, _OP_IO, _OP_SEND, _OP_RECV = 0, 1, 2, 3
# heap event tags
_EV_REQ, _EV_FREE = 0, 1


class Platform:
    """One simulation instance: mesh + failure overlay + seeded RNG.

    Single-owner: one instance advances on one thread. Independent
    instances (different seeds/configs) may run concurrently.
    """

    def __init__(self, arch: ArchConfig, failures: tuple[FailureSpec, ...] | list[FailureSpec] = (),
                 seed: int = 0):
        self.arch = arch
        self.mesh = Mesh(arch)
        self.seed = seed
        self.cycle = 0.0
        self._core_sched: dict[int, _Schedule] = {}
        self._link_sched: dict[int, _Schedule] = {}
        self.failures: list[FailureSpec] = []
        self.inject(failures)

    def inject(self, specs) -> None:
        """Register failure windows; off-mesh locations fail at load time."""
        for spec in specs:
            start = self.arch.seconds_to_cycles(spec.start_s)
            end = self.arch.seconds_to_cycles(spec.start_s + spec.duration_s)
            if spec.kind == "core":
                core = spec.target
                self.arch.coords(core)  # bounds check
                self._core_sched.setdefault(core, _Schedule()).add(start, end, spec.slowdown)
            elif spec.kind == "link":
                u, v = spec.target
                lid = self.mesh.link_id.get((u, v))
                if lid is None:
                    raise ConfigError(f"link ({u}, {v}) not on mesh")
                self._link_sched.setdefault(lid, _Schedule()).add(start, end, spec.slowdown)
            else:  # router: all links incident to the core
                core = spec.target
                self.arch.coords(core)
                for lid in self.mesh.incident_links(core):
                    self._link_sched.setdefault(lid, _Schedule()).add(start, end, spec.slowdown)
            self.failures.append(spec)

    def core_multiplier(self, core: int, cycle: float) -> float:
        sched = self._core_sched.get(core)
        return sched.at(cycle) if sched else 1.0

    def link_multiplier(self, link: tuple[int, int] | int, cycle: float) -> float:
        lid = link if isinstance(link, int) else self.mesh.link_id[link]
        sched = self._link_sched.get(lid)
        return sched.at(cycle) if sched else 1.0

    def run(self, probed: ProbedProgram) -> RunResult:
        """Execute a probed program to completion.

        Honors per-core program order, send/receive pairing by dep id,
        and per-link serialization (one in-flight transfer per link,
        FIFO among contenders). Raises DeadlockError naming blocked
        cores if no runnable event remains while instructions do.

        In list/inst probe mode, each core's recorded compute and io
        events count against its SRAM budget; crossing it logs an
        offload and charges the configured offload latency at that point
        in the core's timeline. Communication records are materialized
        at delivery and are not part of this buffer accounting.
        """
        arch = self.arch
        mesh = self.mesh
        rng = random.Random(self.seed)
        probe_cost = float(arch.probe_clock_cycles)
        mu, sigma = arch.core_mu, arch.core_sigma
        bw, shape, rate = arch.link_bandwidth, arch.link_shape, arch.link_rate
        core_sched = self._core_sched
        link_sched = self._link_sched
        track_sram = probed.track_sram

        if probed.compiled is None:
            programs = {}
            for core, instrs in probed.instructions.items():
                costs = probed.costs[core]
                compiled = []
                for ins, (pre, post, record) in zip(instrs, costs):
                    if ins.kind == wl.COMP:
                        compiled.append((_OP_COMP, ins.ident, ins.stage, float(ins.flops),
                                         pre, post, record))
                    elif ins.kind == wl.IO:
                        compiled.append((_OP_IO, ins.ident, ins.stage, float(ins.volume),
                                         pre, post, record))
                    elif ins.role == wl.SEND:
                        compiled.append((_OP_SEND, ins.ident, ins.stage, float(ins.volume),
                                         pre, post, record, ins.src, ins.dst))
                    else:
                        compiled.append((_OP_RECV, ins.ident, ins.stage, float(ins.volume),
                                         pre, post, record, ins.src, ins.dst))
                programs[core] = compiled
            probed.compiled = programs
        programs = probed.compiled

        events: list[TraceEvent] = []
        append_event = events.append
        heap: list = []
        seq = 0
        delivered: dict[int, float] = {}
        parked: dict[int, tuple[int, int, float]] = {}  # dep -> (core, pc, reach time)
        link_busy = [False] * mesh.n_links
        link_queue: list[deque] = [deque() for _ in range(mesh.n_links)]
        core_time = {c: 0.0 for c in programs}
        core_pc = {c: 0 for c in programs}
        probe_cycles = 0.0
        offload_count = 0
        offload_cycles = 0.0
        sram_events = {c: 0 for c in programs}
        sram_capacity = max(1, arch.sram_bytes // 32)
        remaining = sum(len(p) for p in programs.values())
        total = 0.0

        def run_core(core: int, t: float, pc: int) -> None:
            # Batch through non-blocking instructions; park on unready recv.
            nonlocal seq, probe_cycles, remaining, total, offload_count, offload_cycles
            prog = programs[core]
            n = len(prog)
            while pc < n:
                ins = prog[pc]
                op = ins[0]
                if op == _OP_COMP or op == _OP_IO:
                    pre, post, record = ins[4], ins[5], ins[6]
                    if pre:
                        t += probe_cost
                        probe_cycles += probe_cost
                    if op == _OP_COMP:
                        if core_sched:
                            m = self.core_multiplier(core, t)
                        else:
                            m = 1.0
                        dur = sample_compute_latency(ins[3], mu, sigma, m, rng)
                    else:
                        m = self.core_multiplier(core, t) if core_sched else 1.0
                        dur = ins[3] / (bw * m)
                    if record:
                        append_event(TraceEvent(core, wl.COMP if op == _OP_COMP else wl.IO,
                                                ins[1], ins[2], t, t + dur, int(ins[3])))
                        if track_sram:
                            sram_events[core] += 1
                            if sram_events[core] >= sram_capacity:
                                sram_events[core] = 0
                                offload_count += 1
                                offload_cycles += arch.offload_cycles
                                t += arch.offload_cycles
                    t += dur
                    if post:
                        t += probe_cost
                        probe_cycles += probe_cost
                elif op == _OP_SEND:
                    pre = ins[4]
                    if pre:
                        t += probe_cost
                        probe_cycles += probe_cost
                    path = mesh.route(ins[7], ins[8])
                    # msg: [dep, volume, path, hop, issue_t, stage, record, src, dst]
                    msg = [ins[1], ins[3], path, 0, t, ins[2], ins[6], ins[7], ins[8]]
                    if path:
                        heapq.heappush(heap, (t, seq, _EV_REQ, path[0], msg))
                        seq += 1
                    else:  # same-core send: deliver instantly (not produced by lower())
                        delivered[ins[1]] = t
                else:  # recv
                    dep = ins[1]
                    if dep in delivered:
                        arrival = delivered.pop(dep)
                        if arrival > t:
                            t = arrival
                        post = ins[5]
                        if post:
                            t += probe_cost
                            probe_cycles += probe_cost
                    else:
                        parked[dep] = (core, pc, t)
                        core_time[core] = t
                        core_pc[core] = pc
                        return
                remaining -= 1
                pc += 1
            core_time[core] = t
            core_pc[core] = pc
            if t > total:
                total = t

        def start_link(lid: int, msg: list, t: float) -> None:
            nonlocal seq
            link_busy[lid] = True
            m = 1.0
            if link_sched:
                sched = link_sched.get(lid)
                if sched is not None:
                    m = sched.at(t)
            dur = msg[1] / (bw * m)
            if shape > 0:
                dur += rng.gammavariate(shape, 1.0 / rate)
            heapq.heappush(heap, (t + dur, seq, _EV_FREE, lid, msg))
            seq += 1

        def deliver(msg: list, t: float) -> None:
            nonlocal seq, probe_cycles, remaining, total
            dep = msg[0]
            if msg[6]:  # record comm event, owned by the source core
                append_event(TraceEvent(msg[7], wl.COMM, dep, msg[5], msg[4], t,
                                        int(msg[1]), msg[7], msg[8]))
            if t > total:
                total = t
            if dep in parked:
                core, pc, t_reach = parked.pop(dep)
                t_done = t if t > t_reach else t_reach
                post = programs[core][pc][5]
                if post:
                    t_done += probe_cost
                    probe_cycles += probe_cost
                remaining -= 1
                run_core(core, t_done, pc + 1)
            else:
                delivered[dep] = t

        for core in sorted(programs):
            run_core(core, 0.0, 0)

        while heap:
            t, _s, tag, lid, msg = heapq.heappop(heap)
            if tag == _EV_REQ:
                if link_busy[lid]:
                    link_queue[lid].append(msg)
                else:
                    start_link(lid, msg, t)
            else:  # transfer finished on lid
                link_busy[lid] = False
                q = link_queue[lid]
                if q:
                    start_link(lid, q.popleft(), t)
                msg[3] += 1
                path = msg[2]
                if msg[3] < len(path):
                    heapq.heappush(heap, (t, seq, _EV_REQ, path[msg[3]], msg))
                    seq += 1
                else:
                    deliver(msg, t)

        if remaining:
            blocked = {core: dep for dep, (core, _pc, _t) in parked.items()}
            raise DeadlockError(blocked)

        for t in core_time.values():
            if t > total:
                total = t
        self.cycle = total
        events.sort(key=lambda e: (e.core, e.end, e.start, e.kind, e.ident))
        return RunResult(events=events, total_cycles=total, probe_cycles=probe_cycles,
                         offload_count=offload_count, offload_cycles=offload_cycles,
                         seed=self.seed, n_instructions=sum(len(p) for p in programs.values()))
