"""Assembly of the FPGA side: fifos, interface block, channels and engines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .channel import Channel, ChainGroup, HwaEngine, HwaSpec, link_group
from .interface import FpgaInterface
from .kernel import AsyncFifo, ClockDomain, Component, Simulator


@dataclass
class FpgaParams:
    interface_period_ps: int = 3333
    num_tb: int = 2
    rb_depth: int = 8
    pob_depth: int = 2
    cb_depth: int = 2
    lgb_depth: int = 4
    fifo_depth: int = 16
    pr_channels: Optional[int] = None
    ps_group: Optional[int] = None
    result_offset: int = 0x10000
    tb_release: str = "task_end"


class Fpga:
    def __init__(self, sim: Simulator, noc: ClockDomain, specs: Sequence[HwaSpec],
                 groups: Sequence[ChainGroup] = (), params: FpgaParams = FpgaParams(),
                 reply_routing: Optional[Callable] = None, mmu_routing: int = 0, cache=None):
        self.params = params
        self.domain = ClockDomain(params.interface_period_ps, name="ifc")
        self.rx = AsyncFifo(params.fifo_depth, noc, self.domain, name="rx")
        self.tx = AsyncFifo(params.fifo_depth, self.domain, noc, name="tx")
        self.channels = [Channel(s, i, params.num_tb, params.rb_depth, params.pob_depth,
                                 params.cb_depth, params.lgb_depth) for i, s in enumerate(specs)]
        self.interface = FpgaInterface(sim, self.domain, self.channels, self.rx, self.tx,
                                       params.pr_channels, params.ps_group, reply_routing,
                                       mmu_routing, params.result_offset)
        self.interface.cache_buf = cache
        if params.tb_release not in ("task_end", "hwac_end"):
            raise ValueError(f"unknown tb_release {params.tb_release!r}")
        self.interface.tb_release = params.tb_release
        self.engines = [HwaEngine(sim, ch, ClockDomain(ch.spec.period_ps, name=f"hwa{ch.hwa_id}"),
                                  self.interface) for ch in self.channels]
        by_hwa = {ch.hwa_id: ch for ch in self.channels}
        for g in groups:
            link_group(g, by_hwa)

    def channel(self, hwa_id: int) -> Channel:
        return self.interface.by_hwa[hwa_id]


class FifoDrain(Component):
    """Pops a fifo every cycle of ``domain`` and records (time, flit)."""

    def __init__(self, sim: Simulator, fifo, domain: ClockDomain, name: str = "drain"):
        super().__init__(sim, name, domain)
        self.fifo = fifo
        fifo.reader = self
        self.got = []

    def tick(self, t):
        f = self.fifo.pop(t)
        if f is not None:
            self.got.append((t, f))
        if len(self.fifo):
            self.wake(max(self.fifo.next_visible(), self.domain.edge_after(t)))
