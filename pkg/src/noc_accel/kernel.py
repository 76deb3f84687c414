"""
Deterministic multi-clock discrete-event kernel.

Time is an integer number of picoseconds. Every component owns a clock
domain and is only ever woken on one of its own clock edges. Events at the
same instant are ordered by (component id, sequence number), so a run is a
pure function of its configuration and seed.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Optional

INF = math.inf


class SimError(RuntimeError):
    pass


class TimeTravel(SimError):
    pass


@dataclass(frozen=True)
class ClockDomain:
    """Tick k happens at ``phase_ps + k * period_ps``."""

    period_ps: int
    phase_ps: int = 0
    name: str = "clk"

    def __post_init__(self):
        if self.period_ps <= 0:
            raise ValueError(f"clock period must be positive, got {self.period_ps}")
        if self.phase_ps < 0:
            raise ValueError(f"clock phase must be non-negative, got {self.phase_ps}")

    @property
    def freq_mhz(self) -> float:
        return 1e6 / self.period_ps

    def tick(self, k: int) -> int:
        return self.phase_ps + k * self.period_ps

    def edge_at_or_after(self, t: int) -> int:
        if t <= self.phase_ps:
            return self.phase_ps
        k = -(-(t - self.phase_ps) // self.period_ps)
        return self.phase_ps + k * self.period_ps

    def edge_after(self, t: int) -> int:
        return self.edge_at_or_after(t + 1)

    def nth_edge_after(self, t: int, n: int) -> int:
        """Time of the n-th edge strictly after t (n >= 1)."""
        return self.edge_after(t) + (n - 1) * self.period_ps

    def cycles(self, duration_ps: int) -> float:
        return duration_ps / self.period_ps


class Simulator:
    """Event queue plus optional trace output.

    Trace lines are ``time_ps component event``; probe records append extra
    space-separated detail fields to the event.
    """

    def __init__(self, trace: Optional[Any] = None, hash_trace: bool = False):
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.scheduled = 0
        self.dispatched = 0
        self.names: list[str] = []
        self.trace = trace
        self._hash = hashlib.sha256() if hash_trace else None
        self.observers: list[Callable[[int, str, str, tuple], None]] = []
        self.stopped = False

    # -- registration ---------------------------------------------------------

    def register(self, name: str) -> int:
        self.names.append(name)
        return len(self.names) - 1

    # -- scheduling -----------------------------------------------------------

    def schedule(self, t: int, cid: int, fn: Callable, *args) -> None:
        if t < self.now:
            raise TimeTravel(f"cannot schedule at {t} ps, simulation time is {self.now} ps")
        self._seq += 1
        self.scheduled += 1
        heapq.heappush(self._queue, (t, cid, self._seq, fn, args))

    @property
    def pending(self) -> int:
        return len(self._queue)

    def next_time(self) -> float:
        return self._queue[0][0] if self._queue else INF

    def run_until(self, t_end: float) -> float:
        """Dispatch every event with time <= t_end; returns the final time."""
        q = self._queue
        pop = heapq.heappop
        trace = self.trace is not None or self._hash is not None
        while q and q[0][0] <= t_end and not self.stopped:
            t, cid, _, fn, args = pop(q)
            self.now = t
            self.dispatched += 1
            if trace:
                self._emit(f"{t} {self.names[cid]} {fn.__name__}")
            fn(*args)
        if t_end != INF and not self.stopped:
            self.now = max(self.now, int(t_end))
        return self.now

    def stop(self) -> None:
        """Make the current ``run_until`` return after the event being dispatched."""
        self.stopped = True

    def run(self) -> int:
        self.run_until(INF)
        return self.now

    # -- tracing --------------------------------------------------------------

    def _emit(self, line: str) -> None:
        if self.trace is not None:
            self.trace.write(line + "\n")
        if self._hash is not None:
            self._hash.update(line.encode())
            self._hash.update(b"\n")

    def probe(self, comp: str, event: str, *detail) -> None:
        """Record an instrumentation event at the current time."""
        if self.trace is not None or self._hash is not None:
            if detail:
                self._emit(f"{self.now} {comp} {event} " + " ".join(map(str, detail)))
            else:
                self._emit(f"{self.now} {comp} {event}")
        for obs in self.observers:
            obs(self.now, comp, event, detail)

    @property
    def trace_digest(self) -> Optional[str]:
        return self._hash.hexdigest() if self._hash is not None else None


class Component:
    """Something that runs on the edges of one clock domain.

    ``wake(t)`` asks for a tick on the first edge at or after ``t``; repeated
    requests collapse onto the earliest one.
    """

    def __init__(self, sim: Simulator, name: str, domain: ClockDomain):
        self.sim = sim
        self.name = name
        self.domain = domain
        self.cid = sim.register(name)
        self._next_tick = INF

    def wake(self, t: Optional[int] = None) -> None:
        if t is None or t < self.sim.now:
            t = self.sim.now
        e = self.domain.edge_at_or_after(t)
        if e < self._next_tick:
            self._next_tick = e
            self.sim.schedule(e, self.cid, self._tick, e)

    def wake_next_edge(self) -> None:
        self.wake(self.domain.edge_after(self.sim.now))

    def _tick(self, e: int) -> None:
        if e != self._next_tick:
            return  # superseded by an earlier wake
        self._next_tick = INF
        self.tick(e)

    def tick(self, t: int) -> None:  # pragma: no cover - overridden
        raise NotImplementedError

    def at(self, t: int, fn: Callable, *args) -> None:
        """Run ``fn`` at absolute time t under this component's id."""
        self.sim.schedule(t, self.cid, fn, *args)


class AsyncFifo:
    """Bounded FIFO between two clock domains.

    An entry pushed on write edge t becomes visible on the second read-domain
    edge strictly after t. A popped slot is likewise released to the writer on
    the second write-domain edge after the pop (full flag synchroniser).
    ``push`` and ``pop`` report back-pressure as False / None.
    """

    def __init__(self, capacity: int, write_domain: ClockDomain, read_domain: ClockDomain,
                 name: str = "fifo", stages: int = 2):
        if capacity < 1:
            raise ValueError("fifo capacity must be >= 1")
        self.capacity = capacity
        self.write_domain = write_domain
        self.read_domain = read_domain
        self.name = name
        self.stages = stages
        self.entries: deque = deque()  # (value, visible_after_ps)
        self._releases: deque = deque()
        self.reader: Optional[Component] = None
        self.writer: Optional[Component] = None
        self.pushes = 0
        self.pops = 0

    def __len__(self):
        return len(self.entries)

    def visible_time(self, t: int) -> int:
        return self.read_domain.nth_edge_after(t, self.stages)

    def occupancy(self, t: int) -> int:
        rel = self._releases
        while rel and rel[0] <= t:
            rel.popleft()
        return len(self.entries) + len(rel)

    def full(self, t: int) -> bool:
        return self.occupancy(t) >= self.capacity

    def push(self, value, t: int) -> bool:
        if self.occupancy(t) >= self.capacity:
            return False
        visible = self.visible_time(t)
        self.entries.append((value, visible))
        self.pushes += 1
        if self.reader is not None:
            self.reader.wake(visible)
        return True

    def peek(self, t: int):
        if self.entries and self.entries[0][1] <= t:
            return self.entries[0][0]
        return None

    def next_visible(self) -> float:
        return self.entries[0][1] if self.entries else INF

    def pop(self, t: int):
        if not self.entries or self.entries[0][1] > t:
            return None
        value, _ = self.entries.popleft()
        self.pops += 1
        release = self.write_domain.nth_edge_after(t, self.stages)
        self._releases.append(release)
        if self.writer is not None:
            self.writer.wake(release)
        return value


class SyncFifo:
    """Same-clock FIFO: a push on edge t is readable on the next edge."""

    def __init__(self, capacity: int, domain: ClockDomain, name: str = "fifo"):
        if capacity < 1:
            raise ValueError("fifo capacity must be >= 1")
        self.capacity = capacity
        self.domain = domain
        self.name = name
        self.entries: deque = deque()
        self.reader: Optional[Component] = None
        self.writer: Optional[Component] = None
        self.pushes = 0
        self.pops = 0

    def __len__(self):
        return len(self.entries)

    def full(self, t: int) -> bool:
        return len(self.entries) >= self.capacity

    def push(self, value, t: int) -> bool:
        if len(self.entries) >= self.capacity:
            return False
        visible = self.domain.edge_after(t)
        self.entries.append((value, visible))
        self.pushes += 1
        if self.reader is not None:
            self.reader.wake(visible)
        return True

    def peek(self, t: int):
        if self.entries and self.entries[0][1] <= t:
            return self.entries[0][0]
        return None

    def next_visible(self) -> float:
        return self.entries[0][1] if self.entries else INF

    def pop(self, t: int):
        if not self.entries or self.entries[0][1] > t:
            return None
        value, _ = self.entries.popleft()
        self.pops += 1
        if self.writer is not None:
            self.writer.wake(t)
        return value
