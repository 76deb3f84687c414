"""
Traffic endpoints: processors that invoke accelerators, and the memory node
(MMU with DMA) used by the memory-access scenario.

Processors are abstract 1 GHz traffic sources. Their software overheads
(forming a request, pushing or draining a flit, fetching a result from
memory) are cycle counts during which the processor does nothing else.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import codec
from .channel import ChainGroup, HwaSpec, ProtocolViolation, synthetic_result
from .codec import HEAD, TAIL, HeadFields, PacketKind
from .kernel import INF, ClockDomain, Component, Simulator, SyncFifo

SLOT_BYTES = 0x400
SLOTS_PER_PROC = 8
REGION_BASE = 0x1000


@dataclass
class WorkloadSpec:
    rate: float = 0.0                 # requests per microsecond
    arrival: str = "fixed"            # fixed | poisson | burst
    targets: tuple = ()               # hwa ids, picked uniformly
    scenario: str = "direct"          # direct | memory
    payload_bytes: Optional[int] = None
    payload_packets: int = 1
    priority: int = 0
    chain_depth: int = 0
    start_ps: int = 0
    max_requests: Optional[int] = None
    max_outstanding: int = 1
    request_cycles: int = 8
    send_cycles: int = 4
    recv_cycles: int = 4
    fetch_cycles: int = 60
    pipeline: tuple = ()              # stages run back to back; the first chain_depth + 1 chained

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("request rate must be >= 0")
        if self.arrival not in ("fixed", "poisson", "burst"):
            raise ValueError(f"unknown arrival process {self.arrival!r}")
        if self.scenario not in ("direct", "memory"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.payload_bytes is not None and not 0 <= self.payload_bytes <= codec.MAX_DATA_BYTES * self.payload_packets:
            raise ValueError("payload bytes exceed what the packets can carry")
        if not 1 <= self.max_outstanding <= SLOTS_PER_PROC:
            raise ValueError(f"max_outstanding must be 1..{SLOTS_PER_PROC}")
        if not 0 <= self.chain_depth <= 3:
            raise ValueError("chain depth must be 0..3")
        if self.pipeline and not self.targets:
            self.targets = (self.pipeline[0],)


@dataclass
class TaskRecord:
    tid: int
    source: int
    hwa: int
    final_hwa: int
    hops: tuple
    input: bytes
    address: int = 0
    issue: int = 0
    grant: Optional[int] = None
    sent: Optional[int] = None
    notified: Optional[int] = None
    finish: Optional[int] = None
    result: Optional[bytes] = None
    result_at: Optional[tuple] = None
    ok: Optional[bool] = None
    rest: tuple = ()


def expected_output(hops: Sequence[int], specs: dict, data: bytes) -> bytes:
    for hwa in hops:
        data = synthetic_result(hwa, data, specs[hwa].output_bytes)
    return data


def chain_hops(first: int, depth: int, groups: Sequence[ChainGroup]) -> tuple[tuple, int]:
    """Accelerators visited and the packed chain index for a chained request.

    The chain follows group order starting after ``first``.
    """
    if depth == 0:
        return (first,), 0
    for g in groups:
        if first in g.members:
            pos = g.index_of(first)
            nxt = list(range(pos + 1, pos + 1 + depth))
            if nxt[-1] >= len(g.members):
                raise ValueError(f"chain depth {depth} from hwa {first} runs past group {list(g.members)}")
            return (first,) + tuple(g.members[i] for i in nxt), codec.pack_chain_index(nxt)
    raise ValueError(f"hwa {first} is not in any chain group")


class Processor(Component):
    def __init__(self, sim: Simulator, domain: ClockDomain, source_id: int, node, spec: WorkloadSpec,
                 fpga_routing: int, specs: dict, groups: Sequence[ChainGroup] = (),
                 memory: Optional["Mmu"] = None, result_offset: int = 0, seed: int = 0,
                 link_depth: int = 4, on_complete: Optional[Callable] = None):
        super().__init__(sim, f"cpu{source_id}", domain)
        self.source_id = source_id
        self.node = tuple(node)
        self.spec = spec
        self.fpga_routing = fpga_routing
        self.specs = specs
        self.groups = groups
        self.memory = memory
        self.result_offset = result_offset
        self.rng = random.Random(seed * 1_000_003 + source_id)
        self.link_out = SyncFifo(link_depth, domain, name=f"{self.name}.out")
        self.link_in = SyncFifo(link_depth, domain, name=f"{self.name}.in")
        self.link_in.reader = self
        self.link_out.writer = self
        self.on_complete = on_complete
        self.backlog = 0
        self.arrived = 0
        self.issued = 0
        self.outstanding: list[TaskRecord] = []
        self.completed: list[TaskRecord] = []
        self.sendq: deque = deque()
        self.busy_until = 0
        self.rx_packet: list = []
        self.pending_results: deque = deque()
        self.continuations: deque = deque()  # (remaining stages, input) of pipeline jobs
        self.seq = 0
        self.injection_stalls = 0
        self.cpu_busy_ps = 0
        if spec.targets and (spec.rate > 0 or spec.arrival == "burst"):
            self.at(spec.start_ps, self._arrive)

    # -- arrivals -------------------------------------------------------------

    def _arrive(self) -> None:
        spec = self.spec
        if spec.max_requests is not None and self.arrived >= spec.max_requests:
            return
        if spec.arrival == "burst":
            n = spec.max_requests if spec.max_requests is not None else 1
            self.arrived += n
            self.backlog += n
            self.wake()
            return
        self.arrived += 1
        self.backlog += 1
        self.wake()
        if spec.max_requests is not None and self.arrived >= spec.max_requests:
            return
        mean = 1e6 / spec.rate
        gap = self.rng.expovariate(1.0) * mean if spec.arrival == "poisson" else mean
        self.at(self.sim.now + max(1, int(round(gap))), self._arrive)

    # -- main loop ------------------------------------------------------------

    def tick(self, t: int) -> None:
        if t < self.busy_until:
            self.wake(self.busy_until)
            return
        P = self.domain.period_ps
        cost = 0
        f = self.link_in.pop(t)
        if f is not None:
            cost = self._receive(f, t)
        elif self.sendq:
            flit, event = self.sendq[0]
            if self.link_out.push(flit, t):
                self.sendq.popleft()
                cost = self.spec.send_cycles
                if event is not None:
                    event(t)
            else:
                self.injection_stalls += 1
        elif (self.continuations or self.backlog) and len(self.outstanding) < self.spec.max_outstanding:
            self._issue(t)
            cost = self.spec.request_cycles
        if cost:
            self.busy_until = t + cost * P
            self.cpu_busy_ps += cost * P
            self.wake(self.busy_until)
        elif self.sendq and self.link_out.full(t):
            pass  # link pop wakes us
        elif len(self.link_in):
            self.wake(self.link_in.next_visible())

    def _issue(self, t: int) -> None:
        spec = self.spec
        data = None
        rest = ()
        first_call = True
        if self.continuations:
            stages, data = self.continuations.popleft()
            first_call = False
        else:
            self.backlog -= 1
            stages = spec.pipeline
        if stages:
            # the leading chain_depth + 1 stages are chained, the rest run one by one
            depth = min(spec.chain_depth, len(stages) - 1) if first_call else 0
            hwa = stages[0]
            hops, index = chain_hops(hwa, depth, self.groups)
            if hops != tuple(stages[:depth + 1]):
                raise ValueError(f"pipeline {stages} does not follow chain group order")
            rest = tuple(stages[depth + 1:])
        else:
            depth = spec.chain_depth
            hwa = spec.targets[0] if len(spec.targets) == 1 else self.rng.choice(spec.targets)
            hops, index = chain_hops(hwa, depth, self.groups)
        if data is None:
            nbytes = spec.payload_bytes if spec.payload_bytes is not None else self.specs[hwa].input_bytes
            data = self.rng.randbytes(nbytes)
        nbytes = len(data)
        tid = self.source_id * 1_000_000 + self.seq
        slot = self.seq % SLOTS_PER_PROC
        self.seq += 1
        addr = REGION_BASE + (self.source_id * SLOTS_PER_PROC + slot) * SLOT_BYTES
        rec = TaskRecord(tid, self.source_id, hwa, hops[-1], hops, data, addr, issue=t, rest=rest)
        direction = codec.DIR_MEMORY if spec.scenario == "memory" else codec.DIR_DIRECT
        if direction == codec.DIR_MEMORY:
            self.memory.write(addr, data)
        hdr = HeadFields(routing_info=self.fpga_routing, source_id=self.source_id, hwa_id=hwa,
                         task_head_tail=codec.CMD_REQUEST, chaining_depth=depth,
                         chaining_index=index, packet_priority=spec.priority,
                         packet_direction=direction, start_address=addr, data_size=nbytes)
        req = codec.command_packet(hdr, PacketKind.COMMAND, tag=tid).flits[0]
        self.outstanding.append(rec)
        self.issued += 1
        self.sim.probe(self.name, "issue", tid, hwa)
        self.sendq.append((req, lambda now, tid=tid: self.sim.probe(self.name, "req_sent", tid)))

    # -- inbound --------------------------------------------------------------

    def _receive(self, f, t: int) -> int:
        cost = self.spec.recv_cycles
        ht = f.head_tail
        if ht & HEAD:
            self.rx_packet = [f]
        else:
            self.rx_packet.append(f)
        if not ht & TAIL:
            return cost
        flits = self.rx_packet
        self.rx_packet = []
        hdr = codec.decode_head(flits[0])
        if hdr.packet_type == codec.PKT_COMMAND:
            if hdr.task_head_tail == codec.CMD_GRANT:
                self._on_grant(hdr, flits[0], t)
            elif hdr.task_head_tail == codec.CMD_NOTIFY:
                cost += self._on_notify(hdr, flits[0], t)
            else:
                raise ProtocolViolation(f"{self.name}: unexpected command {hdr.task_head_tail:02b}")
        else:
            data = codec.reassemble(codec.Packet(flits, PacketKind.RESULT))
            self.pending_results.append((hdr.hwa_id, data, flits[0].tag))
            self.sim.probe(self.name, "result_recv", flits[0].tag, len(flits))
        return cost

    def _match(self, pred, what: str, hdr) -> TaskRecord:
        for rec in self.outstanding:
            if pred(rec):
                return rec
        raise ProtocolViolation(
            f"{self.name}: {what} from hwa {hdr.hwa_id} matches no outstanding request")

    def _on_grant(self, hdr, flit, t: int) -> None:
        rec = self._match(lambda r: r.hwa == hdr.hwa_id and r.grant is None, "grant", hdr)
        rec.grant = t
        self.sim.probe(self.name, "grant_recv", rec.tid)
        spec = self.spec
        npk = spec.payload_packets
        size = -(-len(rec.input) // npk) if rec.input else 0
        chunks = [rec.input[i * size:(i + 1) * size] for i in range(npk)] if size else [b""] * npk
        for k, chunk in enumerate(chunks):
            flags = (HEAD if k == 0 else 0) | (TAIL if k == npk - 1 else 0)
            ph = hdr._replace(routing_info=self.fpga_routing, task_head_tail=flags,
                              start_address=rec.address)
            pkt = codec.segment(chunk, ph, PacketKind.PAYLOAD, tag=rec.tid)
            for j, pf in enumerate(pkt.flits):
                last = k == npk - 1 and j == len(pkt.flits) - 1
                self.sendq.append((pf, self._sent_hook(rec) if last else None))

    def _sent_hook(self, rec):
        def done(now):
            rec.sent = now
            self.sim.probe(self.name, "payload_sent", rec.tid)
        return done

    def _on_notify(self, hdr, flit, t: int) -> int:
        memory = self.spec.scenario == "memory"
        rec = self._match(lambda r: r.final_hwa == hdr.hwa_id and (memory or r.grant is not None)
                          and r.notified is None, "notify", hdr)
        rec.notified = t
        self.sim.probe(self.name, "notify_recv", rec.tid)
        extra = 0
        if memory:
            extra = self.spec.fetch_cycles
            rec.result_at = (hdr.start_address, hdr.data_size)
        else:
            for k, (hwa, data, tag) in enumerate(self.pending_results):
                if hwa == hdr.hwa_id:
                    del self.pending_results[k]
                    rec.result = data
                    break
            else:
                raise ProtocolViolation(f"{self.name}: notify before result for hwa {hdr.hwa_id}")
        finish = t + (self.spec.recv_cycles + extra) * self.domain.period_ps
        self.at(finish, self._complete, rec)
        return extra

    def _complete(self, rec: TaskRecord) -> None:
        rec.finish = self.sim.now
        if rec.result_at is not None:
            rec.result = self.memory.read(*rec.result_at)
        rec.ok = rec.result == expected_output(rec.hops, self.specs, rec.input)
        self.outstanding.remove(rec)
        self.completed.append(rec)
        if rec.ok and rec.rest:
            self.continuations.append((rec.rest, rec.result))
        self.sim.probe(self.name, "done", rec.tid, int(bool(rec.ok)))
        if self.on_complete is not None:
            self.on_complete(rec)
        self.wake()


class Mmu(Component):
    """Memory node: DMA for grants, write-back of result packets."""

    def __init__(self, sim: Simulator, domain: ClockDomain, node, fpga_routing: int,
                 size: int = 0x40000, access_cycles: int = 30, beat_cycles: int = 1,
                 link_depth: int = 4, seed: int = 0):
        super().__init__(sim, "mmu", domain)
        self.node = tuple(node)
        self.fpga_routing = fpga_routing
        self.mem = bytearray(random.Random(seed).randbytes(size))
        self.access_cycles = access_cycles
        self.beat_cycles = beat_cycles
        self.link_out = SyncFifo(link_depth, domain, name="mmu.out")
        self.link_in = SyncFifo(link_depth, domain, name="mmu.in")
        self.link_in.reader = self
        self.link_out.writer = self
        self.jobs: deque = deque()
        self.cur: Optional[list] = None
        self.next_beat = 0
        self.rx_packet: list = []
        self.results_written = 0
        self.dma_jobs = 0
        self.bytes_read = 0

    def _check(self, addr: int, n: int) -> None:
        if addr < 0 or addr + n > len(self.mem):
            raise ValueError(f"address range {addr:#x}+{n} is outside the modelled memory")

    def write(self, addr: int, data: bytes) -> None:
        self._check(addr, len(data))
        self.mem[addr:addr + len(data)] = data

    def read(self, addr: int, n: int) -> bytes:
        self._check(addr, n)
        return bytes(self.mem[addr:addr + n])

    def tick(self, t: int) -> None:
        P = self.domain.period_ps
        f = self.link_in.pop(t)
        if f is not None:
            self._receive(f, t)
        if self.cur is None and self.jobs:
            hdr, tag = self.jobs.popleft()
            data = self.read(hdr.start_address, hdr.data_size)
            self.bytes_read += len(data)
            ph = hdr._replace(routing_info=self.fpga_routing, task_head_tail=codec.HEAD_TAIL)
            self.cur = list(codec.segment(data, ph, PacketKind.PAYLOAD, tag=tag).flits)
            self.next_beat = t + self.access_cycles * P
            self.sim.probe(self.name, "dma_start", tag, len(self.cur))
        if self.cur is not None and t >= self.next_beat:
            if self.link_out.push(self.cur[0], t):
                flit = self.cur.pop(0)
                self.next_beat = t + self.beat_cycles * P
                if not self.cur:
                    self.cur = None
                    self.sim.probe(self.name, "dma_done", flit.tag)
        if len(self.link_in) or self.jobs or self.cur is not None:
            nxt = t + P
            if self.cur is not None and self.next_beat > nxt and not len(self.link_in):
                nxt = self.next_beat
            self.wake(nxt)

    def _receive(self, f, t: int) -> None:
        ht = f.head_tail
        if ht & HEAD:
            self.rx_packet = [f]
        else:
            self.rx_packet.append(f)
        if not ht & TAIL:
            return
        flits = self.rx_packet
        self.rx_packet = []
        hdr = codec.decode_head(flits[0])
        if hdr.packet_type == codec.PKT_COMMAND:
            if hdr.task_head_tail != codec.CMD_GRANT:
                raise ProtocolViolation(f"mmu: unexpected command {hdr.task_head_tail:02b}")
            self.jobs.append((hdr, flits[0].tag))
            self.dma_jobs += 1
            self.sim.probe(self.name, "grant_recv", flits[0].tag)
        else:
            data = codec.reassemble(codec.Packet(flits, PacketKind.RESULT))
            self.write(hdr.start_address, data)
            self.results_written += 1
            self.sim.probe(self.name, "result_recv", flits[0].tag, len(flits))
