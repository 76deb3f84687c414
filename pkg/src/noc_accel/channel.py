"""
Per-accelerator channel: task buffers, request buffer, grant bookkeeping,
chaining buffer and the HWA engine (task arbiter, HWAC, execution, PG).

The engine runs in the accelerator's own clock domain. Everything it hands
to the interface (result packets, freed task buffers) carries the time at
which the interface may observe it.

Phase costs, in cycles of the domain doing the work:
    TA / CC          1
    HWAC             4 + N_in
    execution        exec_cycles(N_in)
    PG               4 + N_out
    POB / CB buffer  4 + N_out   (from PG completion until readable)
    RB buffer        4 + 1       (a request that cannot bypass the RB)
"""

from __future__ import annotations

import enum
import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from . import codec
from .arbiter import RoundRobin
from .codec import HeadFields
from .kernel import INF, ClockDomain, Component, Simulator

BUFFER_BASE = 4
FIXED_PHASE = 4


class ProtocolViolation(RuntimeError):
    pass


class NoSuchMember(ValueError):
    pass


@dataclass(frozen=True)
class HwaSpec:
    hwa_id: int
    exec_base: int = 1
    exec_per_flit: int = 0
    input_flits: int = 2
    output_flits: int = 2
    period_ps: int = 3333
    name: str = ""

    def __post_init__(self):
        if not 0 <= self.hwa_id < 32:
            raise ValueError(f"hwa_id {self.hwa_id} does not fit 5 bits")
        if self.output_flits < 1 or self.input_flits < 1:
            raise ValueError(f"hwa {self.hwa_id}: flit counts must be >= 1")
        if self.output_flits > codec.payload_flit_count(codec.MAX_DATA_BYTES):
            raise ValueError(f"hwa {self.hwa_id}: output_flits exceeds one packet")
        if self.exec_cycles(1) < 1:
            raise ValueError(f"hwa {self.hwa_id}: exec cycles must be >= 1")

    def exec_cycles(self, n_in: int) -> int:
        return self.exec_base + self.exec_per_flit * n_in

    @property
    def input_bytes(self) -> int:
        return 16 * (self.input_flits - 1)

    @property
    def output_bytes(self) -> int:
        return 16 * (self.output_flits - 1)


@dataclass(frozen=True)
class ChainGroup:
    """Ordered members; a 2-bit chain index names ``members[index]``."""

    members: tuple

    def __post_init__(self):
        if not 1 <= len(self.members) <= 4:
            raise ValueError("a chain group holds 1 to 4 accelerators")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"chain group members repeat: {self.members}")

    def hwa_for(self, index: int) -> int:
        if not 0 <= index < len(self.members):
            raise NoSuchMember(f"chain index {index} outside group {list(self.members)}")
        return self.members[index]

    def index_of(self, hwa_id: int) -> int:
        return self.members.index(hwa_id)


def synthetic_result(hwa_id: int, data: bytes, nbytes: int) -> bytes:
    """Deterministic stand-in for an accelerator's output."""
    out = bytearray()
    counter = 0
    key = bytes([hwa_id])
    while len(out) < nbytes:
        h = hashlib.blake2b(data, key=key, digest_size=64, salt=counter.to_bytes(16, "little"))
        out += h.digest()
        counter += 1
    return bytes(out[:nbytes])


class TbState(enum.Enum):
    FREE = "free"
    GRANTED = "granted"
    FILLING = "filling"
    READY = "ready"
    EXECUTING = "executing"


@dataclass
class Task:
    tid: object
    hwa_id: int
    source_id: int
    header: HeadFields
    data: bytearray = field(default_factory=bytearray)
    n_flits: int = 0


@dataclass
class TaskBuffer:
    index: int
    state: TbState = TbState.FREE
    free_at: int = 0  # when the LGC can see it free
    ready_at: float = INF
    task: Optional[Task] = None


@dataclass
class Job:
    task: Task
    header: HeadFields
    data: bytes
    n_in: int
    tb: Optional[TaskBuffer] = None
    cb_owner: Optional["Channel"] = None
    hop: int = 0
    result: bytes = b""
    in_addr: int = 0
    out_addr: int = 0


@dataclass
class ChainEntry:
    header: HeadFields
    data: bytes
    n_flits: int
    target: int
    task: Task
    visible: int
    hop: int
    addr: int = 0


@dataclass
class ResultPacket:
    flits: list
    task: Task
    priority: int
    visible: int
    last: bool
    addr: int = 0


class Channel:
    """State of one HWA channel; the interface and the engine both act on it."""

    def __init__(self, spec: HwaSpec, index: int, num_tb: int = 2, rb_depth: int = 8,
                 pob_depth: int = 2, cb_depth: int = 2, lgb_depth: int = 4):
        if not 1 <= num_tb <= 4:
            raise ValueError("num_tb must be 1..4")
        self.spec = spec
        self.hwa_id = spec.hwa_id
        self.index = index
        self.tbs = [TaskBuffer(i) for i in range(num_tb)]
        self.rb_depth = rb_depth
        self.pob_depth = pob_depth
        self.cb_depth = cb_depth
        self.lgb_depth = lgb_depth
        self.arrivals: deque = deque()   # (visible, flit) from the PR
        self.rb: deque = deque()         # (visible, flit)
        self.cmdq: deque = deque()       # (visible, flit, kind)
        self.grants_queued = 0
        self.pob: deque = deque()        # ResultPacket
        self.pob_reserved = 0
        self.cb: deque = deque()         # ChainEntry
        self.cb_reserved = 0
        self.group: Optional[ChainGroup] = None
        self.group_channels: list = []
        self.engine: Optional["HwaEngine"] = None
        self.ta_rr = RoundRobin(num_tb)
        self.cc_rr: Optional[RoundRobin] = None
        # counters
        self.requests = 0
        self.grants = 0
        self.invocations = 0
        self.ta_starts = 0
        self.notifies = 0
        self.flits_into_tb = 0
        self.flits_consumed = 0
        self.result_flits = 0
        self.result_flits_pob = 0
        self.result_flits_cb = 0
        self.pg_stalls = 0
        self.bypass_grants = 0

    # -- request side ---------------------------------------------------------

    def rb_has_room(self) -> bool:
        return len(self.arrivals) + len(self.rb) < self.rb_depth

    def free_tb(self, t: int) -> Optional[TaskBuffer]:
        for tb in self.tbs:
            if tb.state is TbState.FREE and tb.free_at <= t:
                return tb
        return None

    def outstanding_grants(self) -> int:
        return sum(tb.state is not TbState.FREE for tb in self.tbs)

    # -- engine side ----------------------------------------------------------

    def ta_select(self, t: int) -> Optional[TaskBuffer]:
        ready = [tb.index for tb in self.tbs if tb.state is TbState.READY and tb.ready_at <= t]
        i = self.ta_rr.grant(ready)
        return None if i is None else self.tbs[i]

    def cc_select(self, t: int) -> Optional["Channel"]:
        if not self.group_channels:
            return None
        pending = [k for k, ch in enumerate(self.group_channels)
                   if ch.cb and ch.cb[0].visible <= t and ch.cb[0].target == self.hwa_id]
        k = self.cc_rr.grant(pending)
        return None if k is None else self.group_channels[k]

    def next_chain_visible(self) -> float:
        nxt = INF
        for ch in self.group_channels:
            if ch.cb and ch.cb[0].target == self.hwa_id:
                nxt = min(nxt, ch.cb[0].visible)
        return nxt


def link_group(group: ChainGroup, channels_by_hwa: dict) -> None:
    members = []
    for hwa in group.members:
        if hwa not in channels_by_hwa:
            raise NoSuchMember(f"chain group member {hwa} has no channel")
        members.append(channels_by_hwa[hwa])
    for ch in members:
        ch.group = group
        ch.group_channels = members
        ch.cc_rr = RoundRobin(len(members))


class HwaEngine(Component):
    """TA/CC -> HWAC -> execute -> PG, one task at a time."""

    def __init__(self, sim: Simulator, channel: Channel, domain: ClockDomain, fpga):
        super().__init__(sim, f"hwa{channel.hwa_id}", domain)
        self.ch = channel
        channel.engine = self
        self.fpga = fpga
        self.state = "idle"
        self.job: Optional[Job] = None
        self.out_kind = None
        self.busy_ps = 0
        # per-phase timestamps of the most recent job, for latency checks
        self.last: dict = {}

    # -- scheduling -----------------------------------------------------------

    def tick(self, t: int) -> None:
        if self.state == "pg_wait":
            self._try_pg(t)
            return
        if self.state != "idle":
            return
        P = self.domain.period_ps
        ch = self.ch
        owner = ch.cc_select(t)
        if owner is not None:
            entry = owner.cb[0]
            job = Job(entry.task, entry.header, entry.data, entry.n_flits, cb_owner=owner,
                      hop=entry.hop, in_addr=entry.addr)
            self._probe("cc", job)
        else:
            tb = ch.ta_select(t)
            if tb is None:
                nxt = min(min((b.ready_at for b in ch.tbs if b.state is TbState.READY), default=INF),
                          ch.next_chain_visible())
                if nxt != INF:
                    self.wake(int(nxt))
                return
            tb.state = TbState.EXECUTING
            ch.ta_starts += 1
            task = tb.task
            job = Job(task, task.header, bytes(task.data), task.n_flits, tb=tb)
            cache = self.fpga.cache_buf
            if cache is not None:
                job.in_addr = cache.input_addr(ch.index, tb.index)
            self._probe("ta", job)
        self.state = "input"
        self.job = job
        self.last = {"select": t}
        done = t + P * (1 + FIXED_PHASE + job.n_in)
        cache = self.fpga.cache_buf
        if cache is not None:
            # input comes from the shared cache instead of a task buffer
            c = cache.read(t + P * (1 + FIXED_PHASE), job.in_addr, len(job.data))
            done = max(t + P * (1 + FIXED_PHASE), self.domain.edge_at_or_after(c))
        self.last["hwac_start"] = t + P
        self.at(done, self._exec_start)

    def _probe(self, what, job):
        self.sim.probe(self.name, what, job.task.tid, job.hop)

    def _exec_start(self) -> None:
        t = self.sim.now
        job = self.job
        ch = self.ch
        ch.invocations += 1
        ch.flits_consumed += job.n_in
        if job.tb is not None and self.fpga.tb_release == "hwac_end":
            self._free_tb(job.tb, t)
            job.tb = None
        if job.cb_owner is not None:
            owner = job.cb_owner
            owner.cb.popleft()
            owner.engine.wake(owner.engine.domain.nth_edge_after(t, 2))
        self.last["exec_start"] = t
        self._probe("exec", job)
        self.state = "exec"
        self.at(t + self.domain.period_ps * self.ch.spec.exec_cycles(job.n_in), self._exec_done)

    def _exec_done(self) -> None:
        t = self.sim.now
        job = self.job
        self.last["exec_end"] = t
        self._probe("exec_end", job)
        spec = self.ch.spec
        job.result = synthetic_result(spec.hwa_id, job.data, spec.output_bytes)
        self.out_kind = "cb" if job.header.chaining_depth > 0 else "pob"
        self._try_pg(t)

    def _free_tb(self, tb: TaskBuffer, t: int) -> None:
        tb.state = TbState.FREE
        tb.task = None
        tb.ready_at = INF
        tb.free_at = self.fpga.domain.nth_edge_after(t, 2)
        self.sim.probe(self.name, "tb_free", tb.index)
        self.fpga.wake(tb.free_at)

    def _try_pg(self, t: int) -> None:
        ch = self.ch
        if self.out_kind == "cb":
            room = len(ch.cb) + ch.cb_reserved < ch.cb_depth
        else:
            room = len(ch.pob) + ch.pob_reserved < ch.pob_depth
        if not room:
            if self.state != "pg_wait":
                ch.pg_stalls += 1
            self.state = "pg_wait"
            return
        if self.out_kind == "cb":
            ch.cb_reserved += 1
        else:
            ch.pob_reserved += 1
        self.state = "pg"
        self.last["pg_start"] = t
        n_out = ch.spec.output_flits
        P = self.domain.period_ps
        done = t + P * (FIXED_PHASE + n_out)
        cache = self.fpga.cache_buf
        if cache is not None:
            self.job.out_addr = cache.next_output_addr(ch.index)
            c = cache.write(t + P * FIXED_PHASE, self.job.out_addr, self.job.result)
            done = max(t + P * FIXED_PHASE, self.domain.edge_at_or_after(c))
        self.at(done, self._pg_done)

    def _pg_done(self) -> None:
        t = self.sim.now
        ch = self.ch
        job = self.job
        spec = ch.spec
        P = self.domain.period_ps
        n_out = spec.output_flits
        visible = t + P * (BUFFER_BASE + n_out)
        if self.fpga.cache_buf is not None:
            visible = t  # the result already sits in the cache
        self.last["pg_end"] = t
        self.last["buffer_visible"] = visible
        ch.result_flits += n_out
        if self.out_kind == "cb":
            ch.cb_reserved -= 1
            hdr = job.header
            target = ch.group.hwa_for(codec.chain_front(hdr.chaining_index))
            hdr = hdr._replace(chaining_depth=hdr.chaining_depth - 1,
                               chaining_index=codec.shift_chain_index(hdr.chaining_index))
            ch.cb.append(ChainEntry(hdr, job.result, n_out, target, job.task, visible, job.hop + 1,
                                    job.out_addr))
            ch.result_flits_cb += n_out
            self._probe("pg_cb", job)
            for other in ch.group_channels:
                if other.hwa_id == target:
                    other.engine.wake(visible)
        else:
            ch.pob_reserved -= 1
            pkt = self.fpga.build_result(ch, job)
            ch.pob.append(ResultPacket(pkt.flits, job.task, job.header.packet_priority,
                                       self.fpga.domain.edge_at_or_after(visible), True,
                                       job.out_addr))
            ch.result_flits_pob += n_out
            self._probe("pg_pob", job)
            self.fpga.wake(visible)
        if job.tb is not None:
            self._free_tb(job.tb, t)
        self.busy_ps += t - self.last["select"]
        self.job = None
        self.state = "idle"
        self.wake(t)
