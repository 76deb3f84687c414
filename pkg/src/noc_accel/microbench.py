"""
Idle-channel micro-benchmarks: drive one invocation straight into the FPGA's
receive fifo and read back how long each block took, in its own clock cycles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import codec
from .channel import ChainGroup, HwaSpec
from .codec import HeadFields, encode_routing
from .fpga import FifoDrain, Fpga, FpgaParams
from .kernel import ClockDomain, Simulator

NOC_PERIOD = 1000
FPGA_NODE = encode_routing(2, 2)


class NotWholeCycles(AssertionError):
    pass


def _cycles(start: int, end: int, period: int) -> int:
    d = end - start
    if d % period:
        raise NotWholeCycles(f"{d} ps is not a whole number of {period} ps cycles")
    return d // period


@dataclass
class Invocation:
    fpga: Fpga
    drain: FifoDrain
    sim: Simulator
    grant_time: int


def invoke(specs, groups=(), hwa: Optional[int] = None, depth: int = 0, index: int = 0,
           data: Optional[bytes] = None, params: FpgaParams = FpgaParams()) -> Invocation:
    """Run one request/grant/payload/result/notify exchange on an idle FPGA."""
    noc = ClockDomain(NOC_PERIOD, name="noc")
    sim = Simulator()
    fpga = Fpga(sim, noc, specs, groups, params, reply_routing=lambda s: encode_routing(0, 0))
    drain = FifoDrain(sim, fpga.tx, noc)
    spec = specs[0] if hwa is None else next(s for s in specs if s.hwa_id == hwa)
    data = bytes(range(256)) * 4 if data is None else data
    data = data[:spec.input_bytes]
    hdr = HeadFields(routing_info=FPGA_NODE, source_id=1, hwa_id=spec.hwa_id,
                     chaining_depth=depth, chaining_index=index, data_size=len(data))
    fpga.rx.push(codec.command_packet(hdr, tag=1).flits[0], 0)
    sim.run()
    t, grant = drain.got[0]
    tb = codec.decode_head(grant).task_buffer_id
    pkt = codec.segment(data, hdr._replace(task_buffer_id=tb, task_head_tail=codec.HEAD_TAIL),
                        tag=1)
    tt = t
    for f in pkt.flits:
        tt += NOC_PERIOD
        sim.run_until(tt)
        while not fpga.rx.push(f, tt):  # back-pressure, like a router would see
            tt += NOC_PERIOD
            sim.run_until(tt)
    sim.run()
    return Invocation(fpga, drain, sim, t)


def measure_contracts(n: int, exec_cycles: int = 10, period_ps: int = 3333) -> dict:
    """Cycle counts of every block for an N-flit input and N-flit output task."""
    spec = HwaSpec(1, exec_base=exec_cycles, input_flits=n, output_flits=n, period_ps=period_ps)
    inv = invoke([spec])
    ifc = inv.fpga.interface
    P = inv.fpga.domain.period_ps
    eng = inv.fpga.engines[0].last
    Ph = period_ps
    out = {
        "pr_command": _cycles(*ifc.last["pr_command"], P),
        "lgc": _cycles(ifc.last["lgc"], ifc.last["ps_grant"][0], P),
        "ps_command": _cycles(*ifc.last["ps_grant"], P),
        "pr_payload": _cycles(*ifc.last["pr_payload"], P),
        "ta": _cycles(eng["select"], eng["hwac_start"], Ph),
        "hwac": _cycles(eng["hwac_start"], eng["exec_start"], Ph),
        "exec": _cycles(eng["exec_start"], eng["exec_end"], Ph),
        "pg": _cycles(eng["pg_start"], eng["pg_end"], Ph),
        "buffer": _cycles(eng["pg_end"], eng["buffer_visible"], Ph),
        "ps_result": _cycles(*ifc.last["ps_result"], P),
    }
    out.update(measure_chain_hop(n, exec_cycles, period_ps))
    return out


def measure_chain_hop(n: int, exec_cycles: int = 10, period_ps: int = 3333) -> dict:
    """CC arbitration and chaining-buffer latency for a two-stage chain."""
    a = HwaSpec(1, exec_base=exec_cycles, input_flits=n, output_flits=n, period_ps=period_ps)
    b = HwaSpec(2, exec_base=exec_cycles, input_flits=n, output_flits=n, period_ps=period_ps)
    inv = invoke([a, b], [ChainGroup((1, 2))], hwa=1, depth=1,
                 index=codec.pack_chain_index([1]))
    first = inv.fpga.engines[0].last
    second = inv.fpga.engines[1].last
    return {
        "chain_buffer": _cycles(first["pg_end"], first["buffer_visible"], period_ps),
        "cc": _cycles(second["select"], second["hwac_start"], period_ps),
        "cc_wait": _cycles(first["buffer_visible"], second["select"], period_ps),
    }


def expected_contracts(n: int, exec_cycles: int = 10) -> dict:
    return {"pr_command": 1, "lgc": 1, "ps_command": 1, "pr_payload": 2 + n, "ta": 1,
            "hwac": 4 + n, "exec": exec_cycles, "pg": 4 + n, "buffer": 4 + n,
            "ps_result": 4 + n, "chain_buffer": 4 + n, "cc": 1, "cc_wait": 0}
