"""
2-D mesh NoC with dimension-ordered (XY) routing.

Each router has five input ports. An input port buffers flits in virtual
output queues (one per output port) that share the port's capacity. Packets
are wormhole switched: a head flit reserves its output until the tail passes.
A flit spends ``pipeline_depth`` NoC cycles in a router before it may leave,
and it only leaves when the downstream buffer has room at the start of the
cycle (peek flow control).

Endpoints plug into a router's local port through *sources* (anything with
``peek(t)`` / ``pop(t)`` / ``next_visible()``) and *sinks* (anything with
``full(t)`` / ``push(flit, t)``). The reserved routing bit selects between two
endpoints sharing one node.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .codec import HEAD, TAIL, decode_routing
from .kernel import INF, ClockDomain, Component, Simulator


class Port(enum.IntEnum):
    N = 0
    S = 1
    E = 2
    W = 3
    L = 4


NUM_PORTS = 5
OPPOSITE = {Port.N: Port.S, Port.S: Port.N, Port.E: Port.W, Port.W: Port.E}
STEP = {Port.N: (0, -1), Port.S: (0, 1), Port.E: (1, 0), Port.W: (-1, 0)}


class NodeKind(enum.Enum):
    PROCESSOR = "processor"
    FPGA = "fpga"
    MEMORY = "memory"


@dataclass(frozen=True)
class NodeId:
    x: int
    y: int
    kind: NodeKind = NodeKind.PROCESSOR

    @property
    def xy(self):
        return (self.x, self.y)


def route_xy(here, dest) -> Port:
    """Output port at ``here`` for a flit headed to ``dest`` (X first, then Y)."""
    hx, hy = here[0], here[1]
    dx, dy = dest[0], dest[1]
    if dx > hx:
        return Port.E
    if dx < hx:
        return Port.W
    if dy > hy:
        return Port.S
    if dy < hy:
        return Port.N
    return Port.L


def hop_path(src, dst):
    """Sequence of router coordinates visited from src to dst."""
    path = [tuple(src)]
    cur = tuple(src)
    while True:
        p = route_xy(cur, dst)
        if p == Port.L:
            return path
        dx, dy = STEP[p]
        cur = (cur[0] + dx, cur[1] + dy)
        path.append(cur)


class MeshDeadlock(RuntimeError):
    pass


class _Router:
    __slots__ = ("x", "y", "voq", "occ", "rr", "owner", "route", "queued", "neighbors")

    def __init__(self, x, y):
        self.x = x
        self.y = y
        # voq[in][out] holds (eligible_ps, flit, out_port)
        self.voq = [[deque() for _ in range(NUM_PORTS)] for _ in range(NUM_PORTS)]
        self.occ = [0] * NUM_PORTS
        self.rr = [0] * NUM_PORTS
        self.owner: list[Optional[int]] = [None] * NUM_PORTS
        self.route: dict = {}
        self.queued = 0
        self.neighbors: list = [None] * NUM_PORTS


class _LocalMux:
    """Round-robin packet-atomic mux of the sources sharing a local port."""

    def __init__(self):
        self.sources: list = []
        self.locked: Optional[int] = None
        self.rr = 0
        self.count = 0

    def pick(self, t):
        if self.locked is not None:
            src = self.sources[self.locked]
            return self.locked if src.peek(t) is not None else None
        n = len(self.sources)
        for k in range(n):
            i = (self.rr + k) % n
            if self.sources[i].peek(t) is not None:
                return i
        return None


class Mesh(Component):
    """Cycle-level mesh of routers clocked by one NoC clock domain."""

    def __init__(self, sim: Simulator, domain: ClockDomain, width: int = 3, height: int = 3,
                 buffer_depth: int = 16, pipeline_depth: int = 2, name: str = "mesh"):
        super().__init__(sim, name, domain)
        if pipeline_depth < 1:
            raise ValueError("router pipeline depth must be >= 1")
        if buffer_depth < 1:
            raise ValueError("router buffer depth must be >= 1")
        self.width = width
        self.height = height
        self.buffer_depth = buffer_depth
        self.pipeline_depth = pipeline_depth
        self.routers = {(x, y): _Router(x, y) for x in range(width) for y in range(height)}
        for (x, y), r in self.routers.items():
            for p, (dx, dy) in STEP.items():
                r.neighbors[p] = self.routers.get((x + dx, y + dy))
            for dest in self.routers:
                r.route[dest] = route_xy((x, y), dest)
        self.muxes = {xy: _LocalMux() for xy in self.routers}
        self.sinks: dict = {}
        self.injected = 0
        self.ejected = 0
        self.link_traversals = 0
        self.stalls = 0
        self.packets_injected = 0
        self.last_progress = 0
        self._decode_cache: dict = {}

    # -- wiring ---------------------------------------------------------------

    def _check_node(self, xy):
        if tuple(xy) not in self.routers:
            raise ValueError(f"node {xy} is outside the {self.width}x{self.height} mesh")

    def attach_source(self, xy, source) -> None:
        self._check_node(xy)
        self.muxes[tuple(xy)].sources.append(source)
        source.reader = self

    def attach_sink(self, xy, sub: int, sink) -> None:
        self._check_node(xy)
        self.sinks[(tuple(xy), sub)] = sink
        sink.writer = self

    # -- state queries --------------------------------------------------------

    @property
    def in_flight(self) -> int:
        return sum(r.queued for r in self.routers.values())

    def occupancy(self, xy, port: Port) -> int:
        return self.routers[tuple(xy)].occ[port]

    def _dest(self, routing):
        d = self._decode_cache.get(routing)
        if d is None:
            x, y, sub = decode_routing(routing)
            d = ((x, y), sub)
            if (x, y) not in self.routers:
                raise ValueError(f"routing info {routing:#x} names a node outside the mesh")
            self._decode_cache[routing] = d
        return d

    # -- cycle ----------------------------------------------------------------

    def tick(self, t: int) -> None:
        period = self.domain.period_ps
        lag = (self.pipeline_depth - 1) * period
        cap = self.buffer_depth
        moved = 0
        moves = []
        incoming = {}

        # Injection: each local port accepts at most one flit per cycle.
        for xy, mux in self.muxes.items():
            if not mux.sources:
                continue
            r = self.routers[xy]
            if r.occ[Port.L] >= cap:
                continue
            i = mux.pick(t)
            if i is None:
                continue
            flit = mux.sources[i].pop(t)
            dest, _ = self._dest(flit.raw >> 130)
            out = r.route[dest]
            r.voq[Port.L][out].append((t + period + lag, flit, out))
            r.occ[Port.L] += 1
            r.queued += 1
            self.injected += 1
            moved += 1
            ht = (flit.raw >> 128) & 3
            if ht & HEAD:
                mux.count = 0
            mux.count += 1
            if ht & TAIL:
                mux.locked = None
                mux.rr = (i + 1) % len(mux.sources)
                self.packets_injected += 1
                hops = abs(dest[0] - xy[0]) + abs(dest[1] - xy[1])
                self.sim.probe(self.name, "inject", f"{xy[0]},{xy[1]}", mux.count, hops)
            else:
                mux.locked = i

        # Decide: one flit per output and per input, using start-of-cycle state.
        for xy, r in self.routers.items():
            if not r.queued:
                continue
            used_in = 0
            for out in range(NUM_PORTS):
                owner = r.owner[out]
                if owner is not None:
                    if used_in >> owner & 1:
                        continue
                    q = r.voq[owner][out]
                    if not q or q[0][0] > t:
                        continue
                    cand = owner
                else:
                    cand = None
                    start = r.rr[out]
                    for k in range(NUM_PORTS):
                        i = (start + k) % NUM_PORTS
                        if used_in >> i & 1:
                            continue
                        q = r.voq[i][out]
                        if q and q[0][0] <= t:
                            cand = i
                            break
                    if cand is None:
                        continue
                    q = r.voq[cand][out]
                flit = q[0][1]
                # peek downstream
                if out == Port.L:
                    dest, sub = self._dest(flit.raw >> 130)
                    sink = self.sinks.get((dest, sub))
                    if sink is None:
                        raise ValueError(f"no endpoint attached at {dest} sub {sub}")
                    key = ("sink", dest, sub)
                    if incoming.get(key, 0) or sink.full(t):
                        self.stalls += 1
                        continue
                else:
                    nb = r.neighbors[out]
                    inp = OPPOSITE[out]
                    key = (nb.x, nb.y, inp)
                    if nb.occ[inp] + incoming.get(key, 0) >= cap:
                        self.stalls += 1
                        continue
                incoming[key] = incoming.get(key, 0) + 1
                used_in |= 1 << cand
                moves.append((r, cand, out, key))

        # Apply.
        for r, i, out, key in moves:
            _, flit, _ = r.voq[i][out].popleft()
            r.occ[i] -= 1
            r.queued -= 1
            ht = (flit.raw >> 128) & 3
            if ht & TAIL:
                r.owner[out] = None
                r.rr[out] = (i + 1) % NUM_PORTS
            elif ht & HEAD:
                r.owner[out] = i
            if out == Port.L:
                _, dest, sub = key
                self.sinks[(dest, sub)].push(flit, t)
                self.ejected += 1
            else:
                nb = r.neighbors[out]
                inp = key[2]
                dest, _ = self._dest(flit.raw >> 130)
                nout = nb.route[dest]
                nb.voq[inp][nout].append((t + period + lag, flit, nout))
                nb.occ[inp] += 1
                nb.queued += 1
                self.link_traversals += 1
        moved += len(moves)

        if moved:
            self.last_progress = t
            self.wake(t + period)
            return
        # Nothing moved: sleep until the next flit becomes eligible. Sink pops
        # and source pushes wake us through the fifo hooks.
        nxt = INF
        for r in self.routers.values():
            if not r.queued:
                continue
            for row in r.voq:
                for q in row:
                    if q and t < q[0][0] < nxt:
                        nxt = q[0][0]
        for mux in self.muxes.values():
            for src in mux.sources:
                v = src.next_visible()
                if t < v < nxt:
                    nxt = v
        if nxt != INF:
            self.wake(int(nxt))

    def snapshot(self) -> str:
        """Human-readable queue dump used in deadlock diagnostics."""
        lines = []
        for xy, r in sorted(self.routers.items()):
            if not r.queued:
                continue
            occ = ",".join(f"{Port(p).name}={r.occ[p]}" for p in range(NUM_PORTS) if r.occ[p])
            own = ",".join(f"{Port(o).name}<-{Port(i).name}" for o, i in enumerate(r.owner)
                           if i is not None)
            lines.append(f"router {xy}: occ[{occ}] reserved[{own}]")
        return "\n".join(lines)
