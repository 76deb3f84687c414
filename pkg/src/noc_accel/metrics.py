"""
Run metrics, computed only from probe events.

The same :class:`MetricsCollector` consumes events live (as a simulator
observer) or replayed from a saved trace file, so the two must agree.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

# milestone events carrying the task id as their first detail field
MILESTONES = {
    "issue", "req_sent", "rx_request", "grant", "tx_grant", "grant_recv", "dma_done",
    "payload_sent", "rx_payload", "tb_ready", "ta", "cc", "exec", "exec_end", "pg_pob",
    "pg_cb", "ps_result", "tx_result", "result_recv", "tx_notify", "notify_recv", "done",
}

# which part of the system the interval *ending* at a milestone belongs to
SEGMENT_CLASS = {
    "req_sent": "processor", "payload_sent": "processor", "done": "processor",
    "rx_request": "transmission", "grant_recv": "transmission", "rx_payload": "transmission",
    "result_recv": "transmission", "notify_recv": "transmission", "dma_done": "transmission",
}


@dataclass
class RunMetrics:
    window_us: float = 0.0
    injection_rate: float = 0.0          # flits/us entering the interface
    payload_injection_rate: float = 0.0  # payload flits/us entering the interface
    throughput: float = 0.0              # flits/us leaving the packet sender
    result_throughput: float = 0.0       # result flits/us leaving the packet sender
    request_rate_in: float = 0.0         # requests/us reaching the interface
    tasks_per_us: float = 0.0
    fpga_busy_fraction: float = 0.0
    requests: int = 0
    grants: int = 0
    notifies: int = 0
    tasks_completed: int = 0
    tasks_failed: int = 0
    completion_time_us: float = 0.0
    mean_latency_ns: float = 0.0
    latency_processor_ns: float = 0.0
    latency_transmission_ns: float = 0.0
    latency_fpga_ns: float = 0.0
    latency_residual_ns: float = 0.0
    noc_packets: int = 0
    noc_flits: int = 0
    noc_flit_hops: int = 0

    def as_row(self) -> dict:
        return {k: (round(v, 6) if isinstance(v, float) else v) for k, v in asdict(self).items()}


class MetricsCollector:
    def __init__(self, warmup_ps: int = 0, end_ps: Optional[int] = None):
        self.warmup = warmup_ps
        self.end = end_ps
        self.flits_in = 0
        self.payload_in = 0
        self.requests_in = 0
        self.flits_out = 0
        self.results_out = 0
        self.requests = 0
        self.grants = 0
        self.notifies = 0
        self.busy_since: Optional[int] = None
        self.busy_ps = 0
        self.tasks_done_window = 0
        self.done = []      # (tid, ok, time)
        self.milestones: dict = defaultdict(list)
        self.noc_packets = 0
        self.noc_flits = 0
        self.noc_hops = 0
        self.last_time = 0

    def _in_window(self, t: int) -> bool:
        return t >= self.warmup and (self.end is None or t <= self.end)

    def __call__(self, t: int, comp: str, event: str, detail: tuple) -> None:
        self.last_time = t
        if event in MILESTONES:
            self.milestones[int(detail[0])].append((t, event))
        win = self._in_window(t)
        if event == "rx_payload":
            if win:
                n = int(detail[1])
                self.flits_in += n
                self.payload_in += n
        elif event == "rx_request":
            self.requests += 1
            if win:
                self.flits_in += 1
                self.requests_in += 1
        elif event == "tx_result":
            if win:
                n = int(detail[1])
                self.flits_out += n
                self.results_out += n
        elif event == "tx_grant":
            self.grants += 1
            if win:
                self.flits_out += 1
        elif event == "tx_notify":
            self.notifies += 1
            if win:
                self.flits_out += 1
        elif event == "busy":
            self.busy_since = t
        elif event == "idle":
            self._close_busy(t)
        elif event == "inject" and comp == "mesh":
            self.noc_packets += 1
            n = int(detail[1])
            self.noc_flits += n
            self.noc_hops += n * int(detail[2])
        elif event == "done":
            ok = int(detail[1]) == 1
            self.done.append((int(detail[0]), ok, t))
            if win:
                self.tasks_done_window += 1

    def _close_busy(self, t: int) -> None:
        if self.busy_since is None:
            return
        lo = max(self.busy_since, self.warmup)
        hi = t if self.end is None else min(t, self.end)
        if hi > lo:
            self.busy_ps += hi - lo
        self.busy_since = None

    def breakdown(self, tid: int) -> dict:
        """Consecutive milestone intervals for one task, grouped by class."""
        events = sorted(self.milestones[tid], key=lambda e: e[0])
        out = defaultdict(int)
        for (t0, _), (t1, name) in zip(events, events[1:]):
            out[SEGMENT_CLASS.get(name, "fpga")] += t1 - t0
        return dict(out)

    def finalize(self, end_ps: int) -> RunMetrics:
        end = end_ps if self.end is None else min(end_ps, self.end)
        if self.busy_since is not None:
            saved = self.busy_since
            self._close_busy(end)
            self.busy_since = saved
        window = max(0, end - self.warmup) / 1e6
        m = RunMetrics(window_us=window)
        if window > 0:
            m.injection_rate = self.flits_in / window
            m.payload_injection_rate = self.payload_in / window
            m.throughput = self.flits_out / window
            m.result_throughput = self.results_out / window
            m.request_rate_in = self.requests_in / window
            m.tasks_per_us = self.tasks_done_window / window
            m.fpga_busy_fraction = self.busy_ps / (window * 1e6)
        m.requests = self.requests
        m.grants = self.grants
        m.notifies = self.notifies
        m.tasks_completed = sum(1 for _, ok, _ in self.done if ok)
        m.tasks_failed = sum(1 for _, ok, _ in self.done if not ok)
        if self.done:
            m.completion_time_us = max(t for _, _, t in self.done) / 1e6
        lat, seg = [], defaultdict(float)
        residual = 0
        for tid, _, _ in self.done:
            ev = sorted(self.milestones[tid], key=lambda e: e[0])
            total = ev[-1][0] - ev[0][0]
            lat.append(total)
            b = self.breakdown(tid)
            residual += abs(total - sum(b.values()))
            for k, v in b.items():
                seg[k] += v
        if lat:
            n = len(lat)
            m.mean_latency_ns = sum(lat) / n / 1000
            m.latency_processor_ns = seg["processor"] / n / 1000
            m.latency_transmission_ns = seg["transmission"] / n / 1000
            m.latency_fpga_ns = seg["fpga"] / n / 1000
            m.latency_residual_ns = residual / n / 1000
        m.noc_packets = self.noc_packets
        m.noc_flits = self.noc_flits
        m.noc_flit_hops = self.noc_hops
        return m


def parse_trace_line(line: str):
    parts = line.split()
    if len(parts) < 3:
        return None
    return int(parts[0]), parts[1], parts[2], tuple(parts[3:])


def metrics_from_trace(lines: Iterable[str], warmup_ps: int, end_ps: int,
                       end_window: Optional[int] = None) -> RunMetrics:
    """Recompute metrics from a saved event trace."""
    col = MetricsCollector(warmup_ps, end_window)
    for line in lines:
        rec = parse_trace_line(line)
        if rec is None or rec[2].startswith("_"):
            continue  # dispatch lines name the handler, probes never start with "_"
        col(*rec)
    return col.finalize(end_ps)


def isclose_metrics(a: RunMetrics, b: RunMetrics, tol: float = 1e-9) -> bool:
    ra, rb = asdict(a), asdict(b)
    return all(math.isclose(ra[k], rb[k], rel_tol=tol, abs_tol=tol) for k in ra)
