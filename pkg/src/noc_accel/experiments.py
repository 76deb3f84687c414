"""
Parameter sweeps and the scripted experiment suites.

A sweep runs one simulation per value of a single axis and returns one
metrics row per value, in input order. A suite runs a built-in scenario
and evaluates trend predicates, returning a report of PASS/FAIL checks
with the measured values and a reference annotation.
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .config import SimConfig, load_config, validate, ConfigError
from .microbench import measure_chain_hop
from .system import metrics_table_csv, run


class NotSweepable(ValueError):
    pass


def set_workloads(cfg: SimConfig, **kw) -> SimConfig:
    """Copy of ``cfg`` with the given WorkloadSpec fields changed in every workload."""
    groups = tuple(dataclasses.replace(g, spec=dataclasses.replace(g.spec, **kw))
                   for g in cfg.workloads)
    return cfg.replace(workloads=groups)


def _opt_int(v) -> Optional[int]:
    if v is None or str(v).lower() in ("all", "none", "centralized", "flat", "global"):
        return None
    return int(v)


# axis -> (value parser, config updater)
SWEEPABLE: dict = {
    "request_rate": (float, lambda c, v: set_workloads(c, rate=v)),
    "num_tb": (int, lambda c, v: c.replace(num_tb=v)),
    "chaining_depth": (int, lambda c, v: set_workloads(c, chain_depth=v)),
    "pr_channels": (_opt_int, lambda c, v: c.replace(pr_channels=v)),
    "ps_group": (_opt_int, lambda c, v: c.replace(ps_group=v)),
    "interconnect": (str, lambda c, v: c.replace(interconnect=v)),
    "fpga_buffering": (str, lambda c, v: c.replace(fpga_buffering=v)),
    "tb_release": (str, lambda c, v: c.replace(tb_release=v)),
    "seed": (int, lambda c, v: c.replace(seed=v)),
    "cache_bytes": (int, lambda c, v: c.replace(cache_bytes=v)),
    "cache_port_bytes": (int, lambda c, v: c.replace(cache_port_bytes=v)),
}
ALIASES = {"rate": "request_rate", "chain_depth": "chaining_depth", "tbs": "num_tb",
           "pr_strategy": "pr_channels", "ps_strategy": "ps_group"}


def _axis(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in SWEEPABLE:
        raise NotSweepable(f"parameter {name!r} is not sweepable; choose from "
                           + ", ".join(sorted(SWEEPABLE)))
    return name


def parse_values(axis: str, text: str) -> list:
    conv = SWEEPABLE[_axis(axis)][0]
    return [conv(v.strip()) for v in text.split(",") if v.strip()]


def apply(cfg: SimConfig, axis: str, value) -> SimConfig:
    new = SWEEPABLE[_axis(axis)][1](cfg, value)
    errors = validate(new)
    if errors:
        raise ConfigError([f"{axis}={value}: {e}" for e in errors])
    return new


def run_row(cfg: SimConfig) -> dict:
    r = run(cfg)
    row = r.metrics.as_row()
    row["end_us"] = r.end_ps / 1e6
    row["violations"] = len(r.violations)
    return row


def _timed_row(cfg: SimConfig) -> tuple:
    t0 = time.perf_counter()
    row = run_row(cfg)
    return row, time.perf_counter() - t0


def run_many(cfgs: Sequence[SimConfig], jobs: int = 1, timings: Optional[list] = None) -> list:
    """Independent runs, results in input order; wall-clock seconds go to ``timings``."""
    if jobs <= 1 or len(cfgs) <= 1:
        out = [_timed_row(c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_timed_row, cfgs))
    if timings is not None:
        timings.extend(t for _, t in out)
    return [row for row, _ in out]


def sweep(cfg: SimConfig, axis: str, values: Sequence, jobs: int = 1,
          timings: Optional[list] = None) -> list:
    axis = _axis(axis)
    cfgs = [apply(cfg, axis, v) for v in values]
    rows = run_many(cfgs, jobs, timings)
    return [{axis: v} | row for v, row in zip(values, rows)]


# -- suites ---------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    measured: str
    reference: str = ""

    def line(self) -> str:
        ref = f" [reference: {self.reference}]" if self.reference else ""
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.measured}{ref}"


@dataclass
class SuiteReport:
    name: str
    checks: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    seconds: list = field(default_factory=list)  # wall clock per simulation

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list:
        return [c.line() for c in self.checks]

    def csv(self) -> str:
        return metrics_table_csv(self.rows)


def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def _scenario(name: str) -> SimConfig:
    return load_config(name + ".cfg")


def suite_tb_count(jobs: int = 1) -> SuiteReport:
    rep = SuiteReport("tb_count")
    zz = _scenario("tb_izigzag")
    dv = _scenario("tb_dfdiv")
    cfgs = [zz.replace(num_tb=n) for n in (1, 2, 4)] + [dv.replace(num_tb=n) for n in (1, 2)]
    rows = run_many(cfgs, jobs, rep.seconds)
    for (label, n), row in zip([("izigzag", 1), ("izigzag", 2), ("izigzag", 4),
                                ("dfdiv", 1), ("dfdiv", 2)], rows):
        rep.rows.append({"profile": label, "num_tb": n} | row)
    z1, z2, z4, d1, d2 = (r["completion_time_us"] for r in rows)
    imp12 = (z1 - z2) / z1
    imp24 = (z2 - z4) / z2
    dchg = abs(d1 - d2) / d1
    rep.checks += [
        Check("izigzag-like 1->2 task buffers improves completion time by >= 20%", imp12 >= 0.20,
              f"{_pct(imp12)} ({z1:.3f} -> {z2:.3f} us)", "28.4%"),
        Check("izigzag-like 2->4 task buffers improves completion time by < 3%", imp24 < 0.03,
              f"{_pct(imp24)} ({z2:.3f} -> {z4:.3f} us)"),
        Check("dfdiv-like 1->2 task buffers changes completion time by < 3%", dchg < 0.03,
              f"{_pct(dchg)} ({d1:.1f} -> {d2:.1f} us)", "no noticeable change"),
    ]
    rep.checks.append(_violation_check(rows))
    return rep


IZIGZAG_RATES = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.2, 2.0, 4.0, 8.0)
DFDIV_RATES = (0.01, 0.02, 0.05, 0.1, 0.4, 1.6, 6.4, 12.8)


def saturation_index(values: Sequence[float], frac: float = 0.97) -> int:
    """First point reaching ``frac`` of the peak."""
    peak = max(values)
    return next(i for i, v in enumerate(values) if v >= frac * peak)


def suite_throughput(jobs: int = 1, izigzag_duration_us: int = 50,
                     dfdiv_duration_us: int = 5000) -> SuiteReport:
    rep = SuiteReport("throughput")
    zz = _scenario("izigzag").replace(duration_ps=izigzag_duration_us * 1_000_000)
    zrows = sweep(zz, "request_rate", IZIGZAG_RATES, jobs, rep.seconds)
    dv = _scenario("dfdiv").replace(duration_ps=dfdiv_duration_us * 1_000_000)
    drows = sweep(dv, "request_rate", DFDIV_RATES, jobs, rep.seconds)
    rep.rows = [{"profile": "izigzag"} | r for r in zrows] + [{"profile": "dfdiv"} | r for r in drows]

    thr = [r["throughput"] for r in zrows]
    s = saturation_index(thr)
    peak = max(thr)
    rising = all(thr[i + 1] >= thr[i] for i in range(s))
    flat = all(v >= 0.9 * peak for v in thr[s:])
    sat = zrows[s]
    gap = abs(sat["payload_injection_rate"] - sat["result_throughput"]) / sat["payload_injection_rate"]
    curve = ", ".join(f"{v:.1f}" for v in thr)
    rep.checks += [
        Check(f"izigzag-like throughput nondecreasing up to saturation ({len(thr)} rates)", rising,
              f"saturates at rate {IZIGZAG_RATES[s]}/us; curve {curve} flits/us"),
        Check("izigzag-like throughput past saturation within 10% of peak", flat,
              f"min {min(thr[s:]):.1f} vs peak {peak:.1f} flits/us"),
        Check("izigzag-like FPGA busy fraction at saturation >= 85%", sat["fpga_busy_fraction"] >= 0.85,
              _pct(sat["fpga_busy_fraction"]), "93%"),
        Check("izigzag-like result throughput within 15% of payload injection at saturation", gap <= 0.15,
              f"gap {_pct(gap)} ({sat['result_throughput']:.1f} vs "
              f"{sat['payload_injection_rate']:.1f} flits/us)", "5.7%"),
    ]

    dthr = [r["throughput"] for r in drows]
    dinj = [r["injection_rate"] for r in drows]
    ds = saturation_index(dthr)
    tail = dthr[ds:]
    spread = (max(tail) - min(tail)) / (sum(tail) / len(tail))
    # a rise must clear the same 2% band used for "constant"
    inj_rise = (dinj[-1] - dinj[ds]) / dinj[ds] if dinj[ds] else 0.0
    rep.checks += [
        Check("dfdiv-like throughput beyond saturation constant within 2%", spread <= 0.02,
              f"spread {_pct(spread)} over rates {DFDIV_RATES[ds]}..{DFDIV_RATES[-1]}/us "
              f"({min(tail):.2f}..{max(tail):.2f} flits/us)"),
        Check("dfdiv-like injection rate still rises beyond saturation", inj_rise > 0.02,
              f"injection {dinj[ds]:.2f} -> {dinj[-1]:.2f} flits/us ({_pct(inj_rise)})",
              "rises while throughput is flat"),
    ]
    rep.checks.append(_violation_check(zrows + drows))
    return rep


HOP_FLITS = (1, 3, 18, 64)


def suite_chaining(jobs: int = 1) -> SuiteReport:
    rep = SuiteReport("chaining")
    cfg = _scenario("jpeg_chain")
    rows = sweep(cfg, "chaining_depth", (0, 1, 2, 3), jobs, rep.seconds)
    base = rows[0]["completion_time_us"]
    speed = [base / r["completion_time_us"] for r in rows]
    flits = [r["noc_flits"] for r in rows]
    for r, sp in zip(rows, speed):
        r["speedup"] = round(sp, 6)
    rep.rows = rows
    rep.checks += [
        Check("speedup vs depth 0 strictly increasing over depths 1, 2, 3",
              all(speed[i + 1] > speed[i] for i in range(3)),
              ", ".join(f"d{i}={v:.3f}" for i, v in enumerate(speed)), "growing trend"),
        Check("NoC flits strictly decrease with chaining depth",
              all(flits[i + 1] < flits[i] for i in range(3)),
              ", ".join(f"d{i}={v}" for i, v in enumerate(flits))),
    ]
    hops = {n: measure_chain_hop(n)["chain_buffer"] for n in HOP_FLITS}
    rep.checks.append(Check("intra-FPGA chain hop takes exactly 4+N cycles",
                            all(hops[n] == 4 + n for n in HOP_FLITS),
                            ", ".join(f"N={n}: {hops[n]}" for n in HOP_FLITS), "4+N"))
    rep.checks.append(_violation_check(rows))
    return rep


# max-throughput operating point used for both orderings
COMPARE_RATE = 8.0


VARIANTS = ("noc", "shared_cache", "bus")


def compare_variants(which: Sequence[str] = VARIANTS, jobs: int = 1, duration_us: int = 100,
                     timings: Optional[list] = None) -> dict:
    """Metrics rows of the izigzag-like scenario at the comparison rate, per variant."""
    cfg = _scenario("izigzag").replace(duration_ps=duration_us * 1_000_000)
    cfg = apply(cfg, "request_rate", COMPARE_RATE)
    variants = {
        "noc": cfg,
        "shared_cache": cfg.replace(fpga_buffering="shared_cache"),
        "bus": cfg.replace(interconnect="bus"),
    }
    names = [n for n in variants if n in which]
    rows = run_many([variants[n] for n in names], jobs, timings)
    return dict(zip(names, rows))


def order_checks(a: str, b: str, ra: dict, rb: dict, thr_ref: str, lat_ref: str) -> list:
    t_sep = ra["throughput"] / rb["throughput"] - 1
    l_sep = rb["mean_latency_ns"] / ra["mean_latency_ns"] - 1
    return [
        Check(f"max throughput {a} > {b} by >= 10%", t_sep >= 0.10,
              f"{ra['throughput']:.1f} vs {rb['throughput']:.1f} flits/us ({b} {_pct(1 - rb['throughput'] / ra['throughput'])} lower)",
              thr_ref),
        Check(f"invocation latency {a} < {b} by >= 10%", l_sep >= 0.10,
              f"{ra['mean_latency_ns']:.0f} vs {rb['mean_latency_ns']:.0f} ns ({1 + l_sep:.2f}x)",
              lat_ref),
    ]


def suite_bus_compare(jobs: int = 1, duration_us: int = 100) -> SuiteReport:
    rep = SuiteReport("bus_compare")
    rows = compare_variants(VARIANTS, jobs, duration_us, rep.seconds)
    rep.rows = [{"variant": k} | v for k, v in rows.items()]
    rep.checks += order_checks("noc", "bus", rows["noc"], rows["bus"], "27% lower", "2.42x")
    rep.checks += order_checks("shared_cache", "bus", rows["shared_cache"], rows["bus"], "", "")
    rep.checks.append(_violation_check(list(rows.values())))
    return rep


def suite_cache_compare(jobs: int = 1, duration_us: int = 100) -> SuiteReport:
    rep = SuiteReport("cache_compare")
    rows = compare_variants(("noc", "shared_cache"), jobs, duration_us, rep.seconds)
    rep.rows = [{"variant": k} | v for k, v in rows.items()]
    rep.checks += order_checks("noc", "shared_cache", rows["noc"], rows["shared_cache"],
                                "22.5% lower", "1.63x")
    rep.checks.append(_violation_check(list(rows.values())))
    return rep


def _violation_check(rows: list) -> Check:
    bad = sum(r["violations"] + r["tasks_failed"] for r in rows)
    return Check("runs end with no protocol violations or wrong results", bad == 0,
                 f"{bad} across {len(rows)} runs")


SUITES: dict = {
    "tb_count": suite_tb_count,
    "throughput": suite_throughput,
    "chaining": suite_chaining,
    "bus_compare": suite_bus_compare,
    "cache_compare": suite_cache_compare,
}


def run_suite(name: str, jobs: int = 1) -> SuiteReport:
    try:
        fn: Callable = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None
    return fn(jobs=jobs)
