"""
Comparison baselines.

``Bus`` replaces the mesh with one shared 128-bit channel (one beat per bus
cycle, round-robin masters, packets moved atomically). The FPGA sits on the
bus as a slave, so its outbound packets only move when the master they are
addressed to polls it.

``SharedCache`` is the storage used when the per-channel task, output and
chaining buffers are replaced by one FPGA-side cache with a single port.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .codec import decode_routing
from .kernel import INF, ClockDomain, Component, Simulator


# -- shared cache ---------------------------------------------------------------

@dataclass
class CacheStats:
    accesses: int = 0
    beats: int = 0
    hits: int = 0
    misses: int = 0
    queue_wait_ps: int = 0


class SharedCache:
    """Set-associative LRU cache with one port.

    Each ``port_bytes`` beat occupies the port for one cycle;
    requests queue FIFO behind the port. A beat completes ``hit_cycles`` after
    it issues, plus ``miss_cycles`` if its line missed (write-allocate).
    """

    def __init__(self, domain: ClockDomain, size: int = 32768, ways: int = 2, line: int = 64,
                 port_bytes: int = 16, hit_cycles: int = 3, miss_cycles: int = 30):
        if size % (ways * line):
            raise ValueError("cache size must be a multiple of ways * line")
        self.domain = domain
        self.ways = ways
        self.line = line
        self.port_bytes = port_bytes
        self.nsets = size // (ways * line)
        self.hit_cycles = hit_cycles
        self.miss_cycles = miss_cycles
        self.sets = [OrderedDict() for _ in range(self.nsets)]
        self.port_free = 0
        self.data: dict = {}
        self.stats = CacheStats()

    def _lookup(self, line_addr: int) -> bool:
        s = self.sets[line_addr % self.nsets]
        if line_addr in s:
            s.move_to_end(line_addr)
            return True
        if len(s) >= self.ways:
            s.popitem(last=False)
        s[line_addr] = True
        return False

    def access(self, t: int, op: str, addr: int, nbytes: int, data: Optional[bytes] = None):
        """Queue an access issued at ``t``; returns (completion time, bytes read)."""
        if op not in ("read", "write"):
            raise ValueError(f"unknown cache op {op!r}")
        P = self.domain.period_ps
        start = max(self.port_free, self.domain.edge_at_or_after(t))
        self.stats.accesses += 1
        self.stats.queue_wait_ps += start - self.domain.edge_at_or_after(t)
        beats = max(1, -(-nbytes // self.port_bytes))
        done = start
        seen: dict = {}
        for b in range(beats):
            issue = start + b * P
            la = (addr + b * self.port_bytes) // self.line
            if la not in seen:
                seen[la] = self._lookup(la)
                if seen[la]:
                    self.stats.hits += 1
                else:
                    self.stats.misses += 1
            lat = self.hit_cycles + (0 if seen[la] else self.miss_cycles)
            done = max(done, issue + lat * P)
        self.stats.beats += beats
        self.port_free = start + beats * P
        out = None
        if op == "write" and data is not None:
            for i, byte in enumerate(data[:nbytes]):
                self.data[addr + i] = byte
        elif op == "read":
            out = bytes(self.data.get(addr + i, 0) for i in range(nbytes))
        return done, out


class CacheBuffering:
    """Timing of the HWA data paths when they go through a :class:`SharedCache`.

    Inputs live at a per (channel, task buffer) address, outputs at a per
    (channel, slot) address; the regions are fixed so repeated tasks reuse
    the same lines.
    """

    IN_BASE = 0x0
    OUT_BASE = 0x80000
    REGION = 0x400

    def __init__(self, cache: SharedCache, num_tb: int, out_slots: int):
        self.cache = cache
        self.num_tb = num_tb
        self.out_slots = out_slots
        self.out_seq: dict = {}

    def input_addr(self, ch_index: int, tb: int) -> int:
        return self.IN_BASE + (ch_index * self.num_tb + tb) * self.REGION

    def next_output_addr(self, ch_index: int) -> int:
        k = self.out_seq.get(ch_index, 0)
        self.out_seq[ch_index] = k + 1
        return self.OUT_BASE + (ch_index * self.out_slots + k % self.out_slots) * self.REGION

    def write(self, t: int, addr: int, data: bytes) -> int:
        return self.cache.access(t, "write", addr, len(data), data)[0]

    def read(self, t: int, addr: int, nbytes: int) -> int:
        return self.cache.access(t, "read", addr, nbytes)[0]


# -- shared bus -----------------------------------------------------------------

@dataclass
class _Master:
    index: int
    node: tuple
    sub: int
    source: object
    slave: bool = False
    wants_poll: Optional[Callable[[], bool]] = None
    staging: list = field(default_factory=list)
    ready: deque = field(default_factory=deque)
    next_poll: int = 0
    grants: int = 0
    beats: int = 0


@dataclass
class _Transfer:
    flits: list
    sink: object
    next_beat: int
    master: _Master
    sent: int = 0


class Bus(Component):
    """Transaction-level shared bus with the mesh's wiring interface."""

    def __init__(self, sim: Simulator, domain: ClockDomain, addr_cycles: int = 1,
                 poll_cycles: int = 50, name: str = "bus"):
        super().__init__(sim, name, domain)
        self.addr_cycles = addr_cycles
        self.poll_cycles = poll_cycles
        self.masters: list[_Master] = []
        self.slave: Optional[_Master] = None
        self.sinks: dict = {}
        self.rr = 0
        self.cur: Optional[_Transfer] = None
        self.busy_until = 0
        # counters
        self.beats_requested = 0
        self.beats_delivered = 0
        self.transactions = 0
        self.polls = 0
        self.empty_polls = 0
        self.busy_cycles = 0
        self.injected = 0
        self.ejected = 0

    # -- wiring ---------------------------------------------------------------

    def attach_source(self, xy, source, sub: int = 0, slave: bool = False,
                      wants_poll: Optional[Callable[[], bool]] = None) -> None:
        m = _Master(len(self.masters), tuple(xy), sub, source, slave, wants_poll)
        if slave:
            if self.slave is not None:
                raise ValueError("the bus has one slave")
            self.slave = m
        else:
            self.masters.append(m)
        source.reader = self

    def attach_sink(self, xy, sub: int, sink) -> None:
        self.sinks[(tuple(xy), sub)] = sink
        sink.writer = self

    @property
    def in_flight(self) -> int:
        staged = sum(len(m.staging) + sum(len(p) for p in m.ready) for m in self._all())
        cur = 0 if self.cur is None else len(self.cur.flits) - self.cur.sent
        return staged + cur

    def _all(self):
        return self.masters + ([self.slave] if self.slave is not None else [])

    def _sink_for(self, flit):
        x, y, sub = decode_routing(flit.routing_info)
        sink = self.sinks.get(((x, y), sub))
        if sink is None:
            raise ValueError(f"no bus target at {(x, y)} sub {sub}")
        return sink, (x, y), sub

    # -- cycle ----------------------------------------------------------------

    def tick(self, t: int) -> None:
        P = self.domain.period_ps
        for m in self._all():
            f = m.source.pop(t)
            if f is not None:
                self.injected += 1
                m.staging.append(f)
                if f.is_tail:
                    m.ready.append(m.staging)
                    self.beats_requested += len(m.staging)
                    m.staging = []
        cur = self.cur
        if cur is not None and t >= cur.next_beat:
            if not cur.sink.full(t):
                cur.sink.push(cur.flits[cur.sent], t)
                cur.sent += 1
                self.beats_delivered += 1
                self.ejected += 1
                cur.master.beats += 1
                cur.next_beat = t + P
                if cur.sent == len(cur.flits):
                    self.cur = None
                    self.busy_until = t + P
        if self.cur is None and t >= self.busy_until:
            self._arbitrate(t)
        if self.cur is not None or t < self.busy_until:
            self.busy_cycles += 1
        self._sleep(t)

    def _arbitrate(self, t: int) -> None:
        P = self.domain.period_ps
        n = len(self.masters)
        for k in range(n):
            m = self.masters[(self.rr + k) % n]
            if m.ready:
                flits = m.ready.popleft()
                self._start(m, flits, t)
                self.rr = (m.index + 1) % n
                return
            if self._poll_due(m, t):
                self.polls += 1
                self.rr = (m.index + 1) % n
                m.grants += 1
                s = self.slave
                if s is not None and s.ready:
                    _, node, sub = self._sink_for(s.ready[0][0])
                    if (node, sub) == (m.node, m.sub):
                        self._start(s, s.ready.popleft(), t)
                        m.next_poll = t + self.poll_cycles * P
                        return
                # empty status read: address phase plus one response beat
                self.empty_polls += 1
                self.busy_until = t + (self.addr_cycles + 1) * P
                m.next_poll = self.busy_until + self.poll_cycles * P
                return

    def _poll_due(self, m: _Master, t: int) -> bool:
        return (self.slave is not None and m.wants_poll is not None and t >= m.next_poll
                and m.wants_poll())

    def _start(self, m: _Master, flits: list, t: int) -> None:
        sink, node, sub = self._sink_for(flits[0])
        m.grants += 1
        self.transactions += 1
        self.cur = _Transfer(flits, sink, t + self.addr_cycles * self.domain.period_ps, m)
        self.sim.probe(self.name, "transfer", flits[0].tag, len(flits), m.index)

    def _sleep(self, t: int) -> None:
        P = self.domain.period_ps
        if self.cur is not None or any(m.ready for m in self._all()):
            self.wake(t + P)
            return
        nxt = INF
        if t < self.busy_until:
            nxt = self.busy_until
        for m in self._all():
            if len(m.source):
                nxt = min(nxt, max(m.source.next_visible(), t + P))
        if self.slave is not None:
            for m in self.masters:
                if m.wants_poll is not None and m.wants_poll():
                    nxt = min(nxt, max(m.next_poll, t + P))
        if nxt != INF:
            self.wake(int(nxt))

    def snapshot(self) -> str:
        lines = [f"bus cur={'-' if self.cur is None else len(self.cur.flits) - self.cur.sent}"
                 f" busy_until={self.busy_until}"]
        for m in self._all():
            lines.append(f"  master {m.index} {m.node}/{m.sub} slave={m.slave} staged={len(m.staging)}"
                         f" ready={len(m.ready)} next_poll={m.next_poll}")
        return "\n".join(lines)
