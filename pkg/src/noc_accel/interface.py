"""
FPGA interface block: packet receivers (PR), local grant controllers (LGC)
and the packet sender (PS), all clocked by the interface clock.

Receivers share the router-output FIFO and claim packets by the channel
that owns the head flit's hwa_id. Latencies in interface cycles:

    PR  command 1, payload 2 + N  (read head, decode, read bodies, commit)
    LGC 1 (bypass) or RB buffer 4 + 1 then 1
    PS  command 1, result 4 + N   (3 setup incl. handoff, N writes, 1 finish)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from . import codec
from .arbiter import RoundRobin, make_arbiter
from .channel import (BUFFER_BASE, Channel, Job, ProtocolViolation, Task, TbState)
from .codec import HEAD, TAIL, HeadFields, PacketKind
from .kernel import INF, AsyncFifo, ClockDomain, Component, Simulator

PS_SETUP = 3


class UnknownHwa(ValueError):
    pass


@dataclass
class _Receiver:
    index: int
    free_at: int = 0
    # payload packet in progress
    channel: Optional[Channel] = None
    flits: list = field(default_factory=list)
    head: Optional[HeadFields] = None
    head_time: int = 0
    next_read: int = 0
    commit_at: float = INF
    reading: bool = False
    busy_cycles: int = 0


@dataclass
class _Transmission:
    channel: Channel
    flits: list
    kind: str
    next_push: int
    pushed: int = 0
    result: object = None
    start: int = 0


class FpgaInterface(Component):
    def __init__(self, sim: Simulator, domain: ClockDomain, channels: list,
                 rx_fifo: AsyncFifo, tx_fifo: AsyncFifo, pr_channels: Optional[int] = None,
                 ps_group: Optional[int] = None, reply_routing: Optional[Callable] = None,
                 mmu_routing: int = 0, result_offset: int = 0, name: str = "fpga"):
        super().__init__(sim, name, domain)
        self.channels = channels
        self.by_hwa = {ch.hwa_id: ch for ch in channels}
        if len(self.by_hwa) != len(channels):
            raise ValueError("duplicate hwa_id among channels")
        n = len(channels)
        per_pr = n if pr_channels is None else pr_channels
        if per_pr < 1:
            raise ValueError("pr_channels must be >= 1")
        self.receivers = [_Receiver(i) for i in range((n + per_pr - 1) // per_pr)]
        self.pr_of = {ch.hwa_id: self.receivers[ch.index // per_pr] for ch in channels}
        self.ps_arb = make_arbiter(n, ps_group)
        self.cmd_rr = RoundRobin(n)
        self.rx = rx_fifo
        self.tx = tx_fifo
        rx_fifo.reader = self
        tx_fifo.writer = self
        self.reply_routing = reply_routing or (lambda source_id: 0)
        self.mmu_routing = mmu_routing
        self.result_offset = result_offset
        self.fifo_owner: Optional[_Receiver] = None
        self.dropping = False
        self.tx_cur: Optional[_Transmission] = None
        self.ps_free_at = 0
        self.active_tasks = 0
        self.cache_buf = None  # set for the shared-cache baseline
        self.tb_release = "task_end"  # or "hwac_end": free once the input is consumed
        # counters
        self.unknown_hwa = 0
        self.flits_in = 0
        self.flits_out = 0
        self.result_flits_out = 0
        self.ps_stalls = 0
        self.pr_stalls = 0
        self.command_conflicts = 0
        self.last: dict = {}

    # -- helpers --------------------------------------------------------------

    def _probe(self, event, *detail):
        self.sim.probe(self.name, event, *detail)

    def build_result(self, ch: Channel, job: Job) -> codec.Packet:
        hdr = job.header
        memory = hdr.packet_direction == codec.DIR_MEMORY
        routing = self.mmu_routing if memory else self.reply_routing(hdr.source_id)
        addr = (hdr.start_address + self.result_offset) & 0xFFFFFFFF if memory else hdr.start_address
        out = HeadFields(routing_info=routing, source_id=hdr.source_id, hwa_id=ch.hwa_id,
                         task_head_tail=codec.HEAD_TAIL, packet_priority=hdr.packet_priority,
                         packet_direction=hdr.packet_direction, start_address=addr)
        return codec.segment(job.result, out, PacketKind.RESULT, tag=job.task.tid)

    # -- cycle ----------------------------------------------------------------

    def tick(self, t: int) -> None:
        self.progress = False
        self.nxt = INF
        self._ps_step(t)
        for ch in self.channels:
            self._lgc_step(ch, t)
        self._pr_step(t)
        if self.progress:
            self.wake(t + self.domain.period_ps)
        elif self.nxt != INF:
            self.wake(int(max(self.nxt, t + 1)))

    def _later(self, when) -> None:
        if when < self.nxt:
            self.nxt = when

    # -- packet sender --------------------------------------------------------

    def _ps_step(self, t: int) -> None:
        P = self.domain.period_ps
        cur = self.tx_cur
        if cur is not None:
            if t < cur.next_push:
                self._later(cur.next_push)
                return
            if not self.tx.push(cur.flits[cur.pushed], t):
                self.ps_stalls += 1
                cur.next_push = t + P
                return  # fifo release wakes us
            self.progress = True
            cur.pushed += 1
            self.flits_out += 1
            if cur.pushed < len(cur.flits):
                cur.next_push = t + P
                self._later(cur.next_push)
                return
            self._finish_tx(cur, t)
            self.tx_cur = None
            if cur.kind == "result":
                self.ps_free_at = t + P
                self._later(self.ps_free_at)
                return
            self.ps_free_at = t
        if t < self.ps_free_at:
            self._later(self.ps_free_at)
            return
        self._ps_select(t)

    def _ps_select(self, t: int) -> None:
        P = self.domain.period_ps
        cmds = []
        results = []
        for ch in self.channels:
            if ch.cmdq:
                if ch.cmdq[0][0] <= t:
                    cmds.append(ch.index)
                else:
                    self._later(ch.cmdq[0][0])
            if ch.pob:
                if ch.pob[0].visible <= t:
                    results.append((ch.index, ch.pob[0].priority))
                else:
                    self._later(ch.pob[0].visible)
        if cmds:
            if results:
                self.command_conflicts += 1
            i = self.cmd_rr.grant(cmds)
            ch = self.channels[i]
            _, flit, kind = ch.cmdq.popleft()
            if kind == "grant":
                ch.grants_queued -= 1
            self.tx_cur = _Transmission(ch, [flit], kind, t + P, start=t)
            self._probe("ps_" + kind, flit.tag, ch.hwa_id)
        elif results:
            i = self.ps_arb.grant(results)
            ch = self.channels[i]
            res = ch.pob[0]
            first = t + P * (PS_SETUP + 1)
            if self.cache_buf is not None:
                c = self.cache_buf.read(t + P * PS_SETUP, res.addr, 16 * (len(res.flits) - 1))
                first = max(first, self.domain.edge_at_or_after(c))
            self.tx_cur = _Transmission(ch, res.flits, "result", first, result=res, start=t)
            self._probe("ps_result", res.task.tid, ch.hwa_id, len(res.flits))
        else:
            return
        self.progress = True

    def _finish_tx(self, cur: _Transmission, t: int) -> None:
        ch = cur.channel
        if cur.kind == "result":
            P = self.domain.period_ps
            done = t + P
            res = ch.pob.popleft()
            self.result_flits_out += len(res.flits)
            self.last["ps_result"] = (cur.start, done)
            self._probe("tx_result", res.task.tid, len(res.flits))
            eng = ch.engine
            eng.wake(eng.domain.nth_edge_after(done, 2))
            if res.last:
                self._queue_notify(ch, res.task, done)
        else:
            self.last["ps_" + cur.kind] = (cur.start, t)
            self._probe("tx_" + cur.kind, cur.flits[0].tag, 1)
            if cur.kind == "notify":
                self.active_tasks -= 1
                if self.active_tasks == 0:
                    self._probe("idle")

    def _queue_notify(self, ch: Channel, task: Task, t: int) -> None:
        hdr = task.header
        memory = hdr.packet_direction == codec.DIR_MEMORY
        addr = (hdr.start_address + self.result_offset) & 0xFFFFFFFF if memory else hdr.start_address
        out = HeadFields(routing_info=self.reply_routing(hdr.source_id), source_id=hdr.source_id,
                         hwa_id=ch.hwa_id, task_head_tail=codec.CMD_NOTIFY,
                         packet_direction=hdr.packet_direction, start_address=addr,
                         data_size=ch.spec.output_bytes)
        pkt = codec.command_packet(out, PacketKind.NOTIFY, tag=task.tid)
        ch.cmdq.append((t, pkt.flits[0], "notify"))
        ch.notifies += 1
        self._later(t)

    # -- local grant controllers ----------------------------------------------

    def _lgc_step(self, ch: Channel, t: int) -> None:
        granted = False
        while ch.arrivals and ch.arrivals[0][0] <= t:
            _, flit = ch.arrivals.popleft()
            self.progress = True
            if not granted and not ch.rb and ch.grants_queued < ch.lgb_depth:
                tb = ch.free_tb(t)
                if tb is not None:
                    self._grant(ch, tb, flit, t)
                    ch.bypass_grants += 1
                    granted = True
                    continue
            ch.rb.append((t + self.domain.period_ps * (BUFFER_BASE + 1), flit))
        if ch.arrivals:
            self._later(ch.arrivals[0][0])
        if granted or not ch.rb:
            return
        vis, flit = ch.rb[0]
        if vis > t:
            self._later(vis)
            return
        if ch.grants_queued >= ch.lgb_depth:
            return  # PS pop wakes us
        tb = ch.free_tb(t)
        if tb is None:
            waits = [b.free_at for b in ch.tbs if b.state is TbState.FREE]
            if waits:
                self._later(min(waits))
            return  # engine wakes us when a buffer frees
        ch.rb.popleft()
        self._grant(ch, tb, flit, t)
        self.progress = True

    def _grant(self, ch: Channel, tb, req, t: int) -> None:
        P = self.domain.period_ps
        if tb.state is not TbState.FREE:
            raise ProtocolViolation(f"hwa {ch.hwa_id} task buffer {tb.index} granted twice")
        hdr = codec.decode_head(req)
        memory = hdr.packet_direction == codec.DIR_MEMORY
        routing = self.mmu_routing if memory else self.reply_routing(hdr.source_id)
        g = hdr._replace(routing_info=routing, task_head_tail=codec.CMD_GRANT,
                         task_buffer_id=tb.index)
        pkt = codec.command_packet(g, PacketKind.GRANT, tag=req.tag)
        tb.state = TbState.GRANTED
        ch.cmdq.append((t + P, pkt.flits[0], "grant"))
        ch.grants_queued += 1
        ch.grants += 1
        self.last["lgc"] = t
        if self.active_tasks == 0:
            self._probe("busy")
        self.active_tasks += 1
        self._probe("grant", req.tag, ch.hwa_id, tb.index)
        self._later(t + P)

    # -- packet receivers -----------------------------------------------------

    def _pr_step(self, t: int) -> None:
        P = self.domain.period_ps
        for pr in self.receivers:
            if pr.commit_at <= t:
                self._commit(pr, pr.commit_at)
                self.progress = True
            elif pr.commit_at != INF:
                self._later(pr.commit_at)
        front = self.rx.peek(t)
        if front is None:
            if len(self.rx):
                self._later(self.rx.next_visible())
            return
        if self.dropping:
            self.rx.pop(t)
            self.progress = True
            if front.is_tail:
                self.dropping = False
            return
        owner = self.fifo_owner
        if owner is not None:
            if t < owner.next_read:
                self._later(owner.next_read)
                return
            flit = self.rx.pop(t)
            self.progress = True
            owner.flits.append(flit)
            owner.next_read = t + P
            if flit.is_tail:
                self.fifo_owner = None
                owner.commit_at = self._cache_commit(owner, t, t + 2 * P)
                self._later(owner.commit_at)
            return
        if not front.is_head:
            raise ProtocolViolation(f"body flit at the head of the router output fifo at {t} ps")
        hdr = codec.decode_head(front)
        ch = self.by_hwa.get(hdr.hwa_id)
        if ch is None:
            self.unknown_hwa += 1
            self._probe("unknown_hwa", hdr.hwa_id)
            self.rx.pop(t)
            self.progress = True
            self.dropping = not front.is_tail
            return
        pr = self.pr_of[hdr.hwa_id]
        if pr.free_at > t:
            self._later(pr.free_at)
            return
        if hdr.packet_type == codec.PKT_COMMAND:
            if not ch.rb_has_room():
                self.pr_stalls += 1
                return  # LGC progress wakes us
            self.rx.pop(t)
            self.progress = True
            self.flits_in += 1
            ch.requests += 1
            ch.arrivals.append((t + P, front))
            pr.free_at = t + P
            pr.busy_cycles += 1
            self.last["pr_command"] = (t, t + P)
            self._probe("rx_request", front.tag, 1)
            self._later(t + P)
            return
        tb = ch.tbs[hdr.task_buffer_id] if hdr.task_buffer_id < len(ch.tbs) else None
        if tb is None or tb.state not in (TbState.GRANTED, TbState.FILLING):
            raise ProtocolViolation(
                f"payload for hwa {hdr.hwa_id} task buffer {hdr.task_buffer_id} which is not granted")
        self.rx.pop(t)
        self.progress = True
        pr.channel = ch
        pr.flits = [front]
        pr.head = hdr
        pr.head_time = t
        if front.is_tail:
            pr.commit_at = self._cache_commit(pr, t, t + 3 * P)
            self._later(pr.commit_at)
        else:
            self.fifo_owner = pr
            pr.next_read = t + 2 * P
            self._later(pr.next_read)
        pr.free_at = INF

    def _cache_commit(self, pr: _Receiver, t: int, commit: int) -> int:
        """Commit time once the packet's data is also written to the shared cache."""
        if self.cache_buf is None:
            return commit
        ch = pr.channel
        tb = ch.tbs[pr.head.task_buffer_id]
        offset = len(tb.task.data) if tb.task is not None else 0
        data = codec.reassemble(codec.Packet(pr.flits, PacketKind.PAYLOAD))
        if not data:
            return commit
        c = self.cache_buf.write(t, self.cache_buf.input_addr(ch.index, tb.index) + offset, data)
        return max(commit, self.domain.edge_at_or_after(c))

    def _commit(self, pr: _Receiver, t: int) -> None:
        ch = pr.channel
        hdr = pr.head
        tb = ch.tbs[hdr.task_buffer_id]
        n = len(pr.flits)
        data = codec.reassemble(codec.Packet(pr.flits, PacketKind.PAYLOAD))
        if tb.state is TbState.GRANTED:
            tb.task = Task(pr.flits[0].tag, ch.hwa_id, hdr.source_id, hdr)
            tb.state = TbState.FILLING
        task = tb.task
        task.data += data
        task.n_flits += n
        ch.flits_into_tb += n
        self.flits_in += n
        self.last["pr_payload"] = (pr.head_time, t)
        self._probe("rx_payload", pr.flits[0].tag, n)
        if hdr.task_head_tail & TAIL:
            tb.state = TbState.READY
            tb.ready_at = t
            self._probe("tb_ready", task.tid, ch.hwa_id, tb.index)
            ch.engine.wake(t)
        pr.busy_cycles += (t - pr.head_time) // self.domain.period_ps
        pr.commit_at = INF
        pr.channel = None
        pr.flits = []
        pr.free_at = t
