"""
Whole-system assembly and single runs.

One FPGA node, one processor on every other node (source ids in row-major
order), and the memory node sharing a router with a processor as local
endpoint 1. The interconnect is the mesh or, for the baseline, the bus.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, TextIO

from .baselines import Bus, CacheBuffering, SharedCache
from .codec import encode_routing
from .config import SimConfig
from .endpoints import Mmu, Processor, WorkloadSpec
from .fpga import Fpga, FpgaParams
from .kernel import ClockDomain, Simulator
from .mesh import Mesh
from .metrics import MetricsCollector, RunMetrics


class Deadlock(RuntimeError):
    """No forward progress while work is outstanding; the message holds a state dump."""


TASK_LOG_COLUMNS = ["tid", "source", "hwa", "final_hwa", "hops", "issue_ps", "grant_ps",
                    "sent_ps", "notify_ps", "finish_ps", "latency_ps", "ok"]


@dataclass
class RunResult:
    config: SimConfig
    metrics: RunMetrics
    tasks: list
    counters: dict
    end_ps: int
    trace_digest: Optional[str] = None
    violations: tuple = ()

    def task_log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TASK_LOG_COLUMNS)
        for r in sorted(self.tasks, key=lambda r: r.tid):
            lat = r.finish - r.issue if r.finish is not None else ""
            w.writerow([r.tid, r.source, r.hwa, r.final_hwa, "-".join(map(str, r.hops)), r.issue,
                        "" if r.grant is None else r.grant, "" if r.sent is None else r.sent,
                        "" if r.notified is None else r.notified,
                        "" if r.finish is None else r.finish, lat, int(bool(r.ok))])
        return buf.getvalue()

    def metrics_csv(self, extra: Optional[dict] = None) -> str:
        return metrics_table_csv([self.metrics.as_row() | (extra or {})])


def metrics_table_csv(rows: list) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


class System:
    def __init__(self, cfg: SimConfig, trace: Optional[TextIO] = None, hash_trace: bool = False):
        self.cfg = cfg
        self.sim = Simulator(trace, hash_trace)
        sim = self.sim
        self.noc = ClockDomain(cfg.noc_period_ps, name="noc")
        self.cpu_clk = ClockDomain(cfg.cpu_period_ps, name="cpu")
        self.mem_clk = ClockDomain(cfg.mem_period_ps, name="mem")
        self.collector = MetricsCollector(cfg.warmup_ps, cfg.duration_ps)
        sim.observers.append(self.collector)

        fx, fy = cfg.fpga_node
        self.fpga_routing = encode_routing(fx, fy, 0)
        self.mmu_routing = encode_routing(*cfg.mmu_node, 1)
        nodes = dict(cfg.processor_nodes)
        reply = {sid: encode_routing(x, y, 0) for sid, (x, y) in nodes.items()}

        if cfg.interconnect == "bus":
            self.net = Bus(sim, ClockDomain(cfg.bus_period_ps, name="bus"),
                           cfg.bus_addr_cycles, cfg.bus_poll_cycles)
        else:
            self.net = Mesh(sim, self.noc, cfg.mesh_width, cfg.mesh_height,
                            cfg.router_buffer, cfg.router_pipeline)

        params = FpgaParams(cfg.interface_period_ps, cfg.num_tb, cfg.rb_depth, cfg.pob_depth,
                            cfg.cb_depth, cfg.lgb_depth, cfg.fifo_depth, cfg.pr_channels,
                            cfg.ps_group, cfg.result_offset, cfg.tb_release)
        self.cache = None
        cache_buf = None
        if cfg.fpga_buffering == "shared_cache":
            ifc_clk = ClockDomain(cfg.interface_period_ps, name="cache")
            self.cache = SharedCache(ifc_clk, cfg.cache_bytes, cfg.cache_ways, cfg.cache_line,
                                     cfg.cache_port_bytes, cfg.cache_hit_cycles,
                                     cfg.cache_miss_cycles)
            cache_buf = CacheBuffering(self.cache, cfg.num_tb, cfg.pob_depth + cfg.cb_depth)
        self.specs = {h.hwa_id: h for h in cfg.hwas}
        self.fpga = Fpga(sim, self.noc, cfg.hwas, cfg.chains, params, reply.__getitem__,
                         self.mmu_routing, cache_buf)

        self.mmu = Mmu(sim, self.mem_clk, cfg.mmu_node, self.fpga_routing, cfg.mem_bytes,
                       cfg.mem_access_cycles, cfg.mem_beat_cycles, cfg.link_depth, cfg.seed)

        workload_of = {}
        for g in cfg.workloads:
            for p in g.processors:
                workload_of[p] = g.spec
        self.processors = []
        for sid, node in sorted(nodes.items()):
            spec = workload_of.get(sid, WorkloadSpec())
            p = Processor(sim, self.cpu_clk, sid, node, spec, self.fpga_routing, self.specs,
                          cfg.chains, self.mmu, cfg.result_offset, cfg.seed, cfg.link_depth,
                          on_complete=self._on_complete)
            self.processors.append(p)

        self._wire()
        self.completed = 0
        self.finite = all(self._finite(p.spec) for p in self.processors)

    def _wire(self) -> None:
        net = self.net
        memory_procs = [p for p in self.processors if p.spec.scenario == "memory"]
        if isinstance(net, Bus):
            for p in self.processors:
                net.attach_source(p.node, p.link_out, 0, wants_poll=lambda p=p: bool(p.outstanding))
                net.attach_sink(p.node, 0, p.link_in)
            net.attach_source(self.mmu.node, self.mmu.link_out, 1,
                              wants_poll=lambda: any(p.outstanding for p in memory_procs))
            net.attach_sink(self.mmu.node, 1, self.mmu.link_in)
            net.attach_source(self.cfg.fpga_node, self.fpga.tx, slave=True)
            net.attach_sink(self.cfg.fpga_node, 0, self.fpga.rx)
        else:
            for p in self.processors:
                net.attach_source(p.node, p.link_out)
                net.attach_sink(p.node, 0, p.link_in)
            net.attach_source(self.mmu.node, self.mmu.link_out)
            net.attach_sink(self.mmu.node, 1, self.mmu.link_in)
            net.attach_source(self.cfg.fpga_node, self.fpga.tx)
            net.attach_sink(self.cfg.fpga_node, 0, self.fpga.rx)

    @staticmethod
    def _finite(spec: WorkloadSpec) -> bool:
        return not spec.targets or spec.max_requests is not None or (
            spec.rate == 0 and spec.arrival != "burst")

    def _on_complete(self, rec) -> None:
        self.completed += 1
        if self.cfg.stop_when_done and self.finite and self.quiescent():
            self.sim.stop()

    # -- state ------------------------------------------------------------------

    def outstanding_work(self) -> bool:
        return any(p.outstanding or p.backlog or p.sendq or p.continuations
                   for p in self.processors)

    def quiescent(self) -> bool:
        for p in self.processors:
            target = p.spec.max_requests if p.spec.targets and p.spec.max_requests is not None else 0
            if p.spec.targets and (p.spec.rate > 0 or p.spec.arrival == "burst") and p.arrived < target:
                return False
        return not self.outstanding_work()

    def _signature(self) -> tuple:
        ifc = self.fpga.interface
        return (self.completed, ifc.flits_in, ifc.flits_out, self.net.ejected, self.mmu.dma_jobs,
                sum(e.ch.invocations for e in self.fpga.engines))

    def snapshot(self) -> str:
        ifc = self.fpga.interface
        lines = [f"t={self.sim.now} ps completed={self.completed}"]
        for p in self.processors:
            if p.outstanding or p.backlog or p.sendq:
                lines.append(f"{p.name}: outstanding={[r.tid for r in p.outstanding]} "
                             f"backlog={p.backlog} sendq={len(p.sendq)} link_in={len(p.link_in)}")
        lines.append(f"fpga rx={len(self.fpga.rx)} tx={len(self.fpga.tx)} "
                     f"owner={None if ifc.fifo_owner is None else ifc.fifo_owner.index} "
                     f"tx_cur={None if ifc.tx_cur is None else ifc.tx_cur.kind}")
        for ch in self.fpga.channels:
            tbs = ",".join(tb.state.value for tb in ch.tbs)
            lines.append(f"  hwa{ch.hwa_id}: tb[{tbs}] rb={len(ch.rb)} arrivals={len(ch.arrivals)} "
                         f"cmdq={len(ch.cmdq)} pob={len(ch.pob)} cb={len(ch.cb)} "
                         f"engine={ch.engine.state}")
        lines.append(self.net.snapshot())
        return "\n".join(lines)

    # -- running ----------------------------------------------------------------

    def run(self) -> RunResult:
        cfg = self.cfg
        sim = self.sim
        step = cfg.watchdog_ps
        t = 0
        last = self._signature()
        if cfg.stop_when_done and self.finite and self.quiescent():
            sim.stopped = True  # nothing will ever arrive
        while t < cfg.duration_ps and not sim.stopped:
            t = min(t + step, cfg.duration_ps)
            sim.run_until(t)
            if sim.stopped:
                break
            sig = self._signature()
            if sig == last and self.outstanding_work():
                raise Deadlock(f"no progress for {step} ps with work outstanding\n" + self.snapshot())
            last = sig
        end = sim.now
        metrics = self.collector.finalize(end)
        return RunResult(cfg, metrics, self.tasks(), self.counters(), end, sim.trace_digest,
                         tuple(self.check_invariants()))

    def tasks(self) -> list:
        out = []
        for p in self.processors:
            out.extend(p.completed)
            out.extend(p.outstanding)
        return out

    def counters(self) -> dict:
        ifc = self.fpga.interface
        chs = self.fpga.channels
        c = {
            "requests": sum(ch.requests for ch in chs),
            "grants": sum(ch.grants for ch in chs),
            "tasks_started": sum(ch.ta_starts for ch in chs),
            "invocations": sum(ch.invocations for ch in chs),
            "notifies": sum(ch.notifies for ch in chs),
            "bypass_grants": sum(ch.bypass_grants for ch in chs),
            "pg_stalls": sum(ch.pg_stalls for ch in chs),
            "result_flits_cb": sum(ch.result_flits_cb for ch in chs),
            "pr_stalls": ifc.pr_stalls,
            "ps_stalls": ifc.ps_stalls,
            "unknown_hwa": ifc.unknown_hwa,
            "fpga_flits_in": ifc.flits_in,
            "fpga_flits_out": ifc.flits_out,
            "net_injected": self.net.injected,
            "net_ejected": self.net.ejected,
            "net_in_flight": self.net.in_flight,
            "injection_stalls": sum(p.injection_stalls for p in self.processors),
            "dma_jobs": self.mmu.dma_jobs,
            "results_written": self.mmu.results_written,
            "tasks_completed": sum(len(p.completed) for p in self.processors),
            "tasks_failed": sum(1 for p in self.processors for r in p.completed if not r.ok),
        }
        if self.cache is not None:
            s = self.cache.stats
            c.update(cache_accesses=s.accesses, cache_hits=s.hits, cache_misses=s.misses,
                     cache_queue_wait_ps=s.queue_wait_ps)
        if isinstance(self.net, Bus):
            c.update(bus_polls=self.net.polls, bus_empty_polls=self.net.empty_polls,
                     bus_transactions=self.net.transactions)
        return c

    def check_invariants(self) -> list:
        """Protocol and conservation checks; only meaningful at quiescence."""
        if self.outstanding_work():
            return []
        c = self.counters()
        bad = []
        if not c["requests"] == c["grants"] == c["tasks_started"] == c["notifies"]:
            bad.append("request/grant/task/notify counts differ: "
                       f"{c['requests']}/{c['grants']}/{c['tasks_started']}/{c['notifies']}")
        if c["net_injected"] != c["net_ejected"] or c["net_in_flight"]:
            bad.append(f"flits injected {c['net_injected']} != ejected {c['net_ejected']}")
        if c["tasks_failed"]:
            bad.append(f"{c['tasks_failed']} tasks returned a wrong result")
        for ch in self.fpga.channels:
            busy = [tb.index for tb in ch.tbs if tb.state.value != "free"]
            if busy:
                bad.append(f"hwa {ch.hwa_id} task buffers {busy} not released")
        return bad


def run(cfg: SimConfig, trace: Optional[TextIO] = None, hash_trace: bool = False) -> RunResult:
    return System(cfg, trace, hash_trace).run()
