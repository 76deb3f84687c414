"""
Configuration: INI-style key/value sections with includes.

A file may pull in others with ``include = a.cfg, b.cfg`` in a ``[config]``
section; included files are read first so the including file overrides
them. Names that do not resolve relative to the including file are looked
up among the built-in scenarios. See docs/config.md for the full schema.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .channel import ChainGroup, HwaSpec
from .endpoints import SLOTS_PER_PROC, WorkloadSpec, chain_hops

SCENARIO_DIR = Path(__file__).with_name("scenarios")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class WorkloadGroup:
    name: str
    processors: tuple
    spec: WorkloadSpec


@dataclass
class SimConfig:
    seed: int = 1
    duration_ps: int = 100_000_000
    warmup_ps: int = 10_000_000
    stop_when_done: bool = True
    watchdog_ps: int = 50_000_000
    mesh_width: int = 3
    mesh_height: int = 3
    fpga_node: tuple = (2, 2)
    mmu_node: tuple = (0, 0)
    noc_period_ps: int = 1000
    cpu_period_ps: int = 1000
    mem_period_ps: int = 1000
    interface_period_ps: int = 3333
    router_pipeline: int = 2
    router_buffer: int = 16
    link_depth: int = 4
    fifo_depth: int = 16
    num_tb: int = 2
    rb_depth: int = 8
    pob_depth: int = 2
    cb_depth: int = 2
    lgb_depth: int = 4
    pr_channels: Optional[int] = None
    ps_group: Optional[int] = None
    result_offset: int = 0x10000
    tb_release: str = "task_end"
    interconnect: str = "noc"
    fpga_buffering: str = "distributed"
    bus_period_ps: int = 1000
    bus_addr_cycles: int = 1
    bus_poll_cycles: int = 50
    cache_bytes: int = 32768
    cache_ways: int = 2
    cache_line: int = 64
    cache_port_bytes: int = 64
    cache_hit_cycles: int = 3
    cache_miss_cycles: int = 30
    mem_bytes: int = 0x40000
    mem_access_cycles: int = 30
    mem_beat_cycles: int = 1
    hwas: tuple = ()
    chains: tuple = ()
    workloads: tuple = ()

    @property
    def processor_nodes(self) -> list:
        """(source_id, node) for every node except the FPGA's, row-major."""
        nodes = [(x, y) for y in range(self.mesh_height) for x in range(self.mesh_width)
                 if (x, y) != tuple(self.fpga_node)]
        return list(enumerate(nodes))

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def hwa_named(self, name_or_id) -> HwaSpec:
        for h in self.hwas:
            if str(h.hwa_id) == str(name_or_id) or h.name == name_or_id:
                return h
        raise KeyError(name_or_id)


# key -> (field, converter); converters raise ValueError on bad input
def _int(v: str) -> int:
    return int(v, 0)


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _us(v: str) -> int:
    return int(round(float(v) * 1e6))


def _node(v: str) -> tuple:
    parts = [int(p) for p in v.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError(f"a node is 'x, y', got {v!r}")
    return tuple(parts)


def _opt_int(*words):
    def conv(v: str):
        if v.strip().lower() in words:
            return None
        return int(v, 0)
    return conv


def _choice(*opts):
    def conv(v: str) -> str:
        s = v.strip().lower()
        if s not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}, got {v!r}")
        return s
    return conv


SYSTEM_KEYS = {
    "seed": ("seed", _int),
    "duration_us": ("duration_ps", _us),
    "warmup_us": ("warmup_ps", _us),
    "stop_when_done": ("stop_when_done", _bool),
    "watchdog_us": ("watchdog_ps", _us),
    "mesh_width": ("mesh_width", _int),
    "mesh_height": ("mesh_height", _int),
    "fpga_node": ("fpga_node", _node),
    "mmu_node": ("mmu_node", _node),
    "noc_period_ps": ("noc_period_ps", _int),
    "cpu_period_ps": ("cpu_period_ps", _int),
    "mem_period_ps": ("mem_period_ps", _int),
    "interface_period_ps": ("interface_period_ps", _int),
    "router_pipeline": ("router_pipeline", _int),
    "router_buffer": ("router_buffer", _int),
    "link_depth": ("link_depth", _int),
    "interconnect": ("interconnect", _choice("noc", "bus")),
    "fpga_buffering": ("fpga_buffering", _choice("distributed", "shared_cache")),
    "bus_period_ps": ("bus_period_ps", _int),
    "bus_addr_cycles": ("bus_addr_cycles", _int),
    "bus_poll_cycles": ("bus_poll_cycles", _int),
    "cache_bytes": ("cache_bytes", _int),
    "cache_ways": ("cache_ways", _int),
    "cache_line": ("cache_line", _int),
    "cache_port_bytes": ("cache_port_bytes", _int),
    "cache_hit_cycles": ("cache_hit_cycles", _int),
    "cache_miss_cycles": ("cache_miss_cycles", _int),
    "mem_bytes": ("mem_bytes", _int),
    "mem_access_cycles": ("mem_access_cycles", _int),
    "mem_beat_cycles": ("mem_beat_cycles", _int),
}

FPGA_KEYS = {
    "fifo_depth": ("fifo_depth", _int),
    "num_tb": ("num_tb", _int),
    "rb_depth": ("rb_depth", _int),
    "pob_depth": ("pob_depth", _int),
    "cb_depth": ("cb_depth", _int),
    "lgb_depth": ("lgb_depth", _int),
    "pr_channels": ("pr_channels", _opt_int("all", "centralized", "centralised")),
    "ps_group": ("ps_group", _opt_int("flat", "global", "all")),
    "result_offset": ("result_offset", _int),
    "tb_release": ("tb_release", _choice("task_end", "hwac_end")),
}

HWA_KEYS = {
    "id": ("hwa_id", _int),
    "exec_cycles": ("exec_base", _int),
    "exec_per_flit": ("exec_per_flit", _int),
    "input_flits": ("input_flits", _int),
    "output_flits": ("output_flits", _int),
    "period_ps": ("period_ps", _int),
}

WORKLOAD_KEYS = {
    "rate": ("rate", float),
    "arrival": ("arrival", _choice("fixed", "poisson", "burst")),
    "scenario": ("scenario", _choice("direct", "memory")),
    "payload_bytes": ("payload_bytes", _int),
    "payload_packets": ("payload_packets", _int),
    "priority": ("priority", _int),
    "chain_depth": ("chain_depth", _int),
    "start_us": ("start_ps", _us),
    "max_requests": ("max_requests", _int),
    "max_outstanding": ("max_outstanding", _int),
    "request_cycles": ("request_cycles", _int),
    "send_cycles": ("send_cycles", _int),
    "recv_cycles": ("recv_cycles", _int),
    "fetch_cycles": ("fetch_cycles", _int),
}


def _resolve(name: str, base: Path) -> Path:
    p = (base / name)
    if p.exists():
        return p
    for cand in (SCENARIO_DIR / name, SCENARIO_DIR / f"{name}.cfg"):
        if cand.exists():
            return cand
    raise FileNotFoundError(name)


def _read_into(parser: configparser.ConfigParser, path: Path, errors: list, seen: tuple,
               text: Optional[str] = None) -> None:
    if path in seen:
        errors.append(f"{path}: include cycle through {' -> '.join(map(str, seen))}")
        return
    if text is None:
        text = path.read_text()
    probe = configparser.ConfigParser(interpolation=None)
    try:
        probe.read_string(text, source=str(path))
    except configparser.ParsingError as e:
        errors.extend(f"{path}: line {n}: cannot parse {line.strip()!r}" for n, line in e.errors)
        return
    except configparser.Error as e:
        n = getattr(e, "lineno", None)
        where = f"{path}: line {n}" if n is not None else str(path)
        errors.append(f"{where}: {e.message.splitlines()[0]}")
        return
    if probe.has_option("config", "include"):
        for name in probe.get("config", "include").split(","):
            name = name.strip()
            if not name:
                continue
            try:
                inc = _resolve(name, path.parent)
            except FileNotFoundError:
                errors.append(f"{path}: include {name!r} not found")
                continue
            _read_into(parser, inc, errors, seen + (path,))
    parser.read_string(text, source=str(path))


def _convert(section, keys: dict, errors: list, where: str) -> dict:
    out = {}
    for key, raw in section.items():
        if key not in keys:
            errors.append(f"[{where}] unknown key {key!r}")
            continue
        fname, conv = keys[key]
        try:
            out[fname] = conv(raw)
        except ValueError as e:
            errors.append(f"[{where}] {key}: {e}")
    return out


def _id_list(raw: str, cfg_hwas: list, where: str, errors: list) -> tuple:
    out = []
    for tok in raw.replace(",", " ").split():
        hit = [h.hwa_id for h in cfg_hwas if h.name == tok or str(h.hwa_id) == tok]
        if not hit:
            errors.append(f"[{where}] references undefined hwa {tok!r}")
        else:
            out.append(hit[0])
    return tuple(out)


def _processor_list(raw: str, n: int, where: str, errors: list) -> tuple:
    raw = raw.strip().lower()
    if raw == "all":
        return tuple(range(n))
    out = []
    for tok in raw.replace(",", " ").split():
        if "-" in tok:
            lo, hi = tok.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(tok))
    for p in out:
        if not 0 <= p < n:
            errors.append(f"[{where}] processor {p} does not exist (0..{n - 1})")
    return tuple(out)


def parse_parser(parser: configparser.ConfigParser, errors: list) -> SimConfig:
    kw = {}
    for name in parser.sections():
        if name in ("config",):
            continue
        if name == "system":
            kw.update(_convert(parser[name], SYSTEM_KEYS, errors, name))
        elif name == "fpga":
            kw.update(_convert(parser[name], FPGA_KEYS, errors, name))
        elif not name.split(None, 1)[0] in ("hwa", "chain", "workload"):
            errors.append(f"unknown section [{name}]")
    cfg = SimConfig(**kw)

    hwas = []
    for name in parser.sections():
        if name.split(None, 1)[0] != "hwa":
            continue
        label = name.split(None, 1)[1].strip() if " " in name else ""
        vals = _convert(parser[name], HWA_KEYS, errors, name)
        if "hwa_id" not in vals:
            errors.append(f"[{name}] missing key 'id'")
            continue
        try:
            hwas.append(HwaSpec(name=label or f"hwa{vals['hwa_id']}", **vals))
        except ValueError as e:
            errors.append(f"[{name}] {e}")
    ids = [h.hwa_id for h in hwas]
    for d in sorted({i for i in ids if ids.count(i) > 1}):
        errors.append(f"duplicate hwa_id {d}")
    names = [h.name for h in hwas]
    for d in sorted({n for n in names if names.count(n) > 1}):
        errors.append(f"duplicate hwa name {d!r}")

    chains = []
    for name in parser.sections():
        if name.split(None, 1)[0] != "chain":
            continue
        sec = parser[name]
        for key in sec:
            if key != "members":
                errors.append(f"[{name}] unknown key {key!r}")
        if "members" not in sec:
            errors.append(f"[{name}] missing key 'members'")
            continue
        members = _id_list(sec["members"], hwas, name, errors)
        try:
            chains.append(ChainGroup(members))
        except ValueError as e:
            errors.append(f"[{name}] {e}")
    seen_in = {}
    for g in chains:
        for m in g.members:
            if m in seen_in:
                errors.append(f"hwa {m} belongs to more than one chain group")
            seen_in[m] = g

    nproc = len(cfg.processor_nodes)
    workloads = []
    for name in parser.sections():
        if name.split(None, 1)[0] != "workload":
            continue
        sec = dict(parser[name])
        procs = _processor_list(sec.pop("processors", "all"), nproc, name, errors)
        pipeline = _id_list(sec.pop("pipeline", ""), hwas, name, errors)
        targets_raw = sec.pop("targets", "all")
        if pipeline:
            targets = pipeline[:1]
        elif targets_raw.strip().lower() == "all":
            targets = tuple(ids)
        else:
            targets = _id_list(targets_raw, hwas, name, errors)
        vals = _convert(sec, WORKLOAD_KEYS, errors, name)
        try:
            spec = WorkloadSpec(targets=targets, pipeline=pipeline, **vals)
        except (ValueError, TypeError) as e:
            errors.append(f"[{name}] {e}")
            continue
        depth = min(spec.chain_depth, len(pipeline) - 1)
        if pipeline and depth:
            try:
                hops, _ = chain_hops(pipeline[0], depth, chains)
                if hops != pipeline[:depth + 1]:
                    errors.append(f"[{name}] pipeline {list(pipeline)} does not follow chain group order")
            except ValueError as e:
                errors.append(f"[{name}] chain index out of group: {e}")
        for t in targets if spec.chain_depth and not pipeline else ():
            try:
                chain_hops(t, spec.chain_depth, chains)
            except ValueError as e:
                errors.append(f"[{name}] chain index out of group: {e}")
        workloads.append(WorkloadGroup(name.split(None, 1)[1].strip() if " " in name else "default",
                                       procs, spec))
    cfg = cfg.replace(hwas=tuple(hwas), chains=tuple(chains), workloads=tuple(workloads))
    errors.extend(validate(cfg))
    return cfg


def validate(cfg: SimConfig) -> list:
    """Semantic checks; returns a list of messages (empty when valid)."""
    errs = []
    w, h = cfg.mesh_width, cfg.mesh_height
    if not (1 <= w <= 8 and 1 <= h <= 8):
        errs.append("mesh dimensions must be 1..8 (3-bit x, y fields)")
    for label, node in (("fpga_node", cfg.fpga_node), ("mmu_node", cfg.mmu_node)):
        if not (0 <= node[0] < w and 0 <= node[1] < h):
            errs.append(f"{label} {node} is outside the {w}x{h} mesh")
    if tuple(cfg.mmu_node) == tuple(cfg.fpga_node):
        errs.append("the memory node cannot share the FPGA node")
    if len(cfg.processor_nodes) > 8:
        errs.append("at most 8 processors fit the 3-bit source id")
    for key in ("noc_period_ps", "cpu_period_ps", "mem_period_ps", "interface_period_ps",
                "bus_period_ps", "router_pipeline", "router_buffer", "link_depth", "fifo_depth",
                "rb_depth", "pob_depth", "cb_depth", "lgb_depth", "cache_ways", "cache_line",
                "cache_port_bytes", "bus_poll_cycles", "watchdog_ps"):
        if getattr(cfg, key) < 1:
            errs.append(f"{key} must be >= 1")
    if not 1 <= cfg.num_tb <= 4:
        errs.append("num_tb must be 1..4 (2-bit task buffer id)")
    if cfg.pr_channels is not None and cfg.pr_channels < 1:
        errs.append("pr_channels must be >= 1")
    if cfg.ps_group is not None and cfg.ps_group < 1:
        errs.append("ps_group must be >= 1")
    if cfg.warmup_ps > cfg.duration_ps:
        errs.append("warmup exceeds duration")
    for key, allowed in (("interconnect", ("noc", "bus")),
                         ("fpga_buffering", ("distributed", "shared_cache")),
                         ("tb_release", ("task_end", "hwac_end"))):
        if getattr(cfg, key) not in allowed:
            errs.append(f"{key} must be one of {', '.join(allowed)}, not {getattr(cfg, key)!r}")
    if cfg.cache_bytes % (cfg.cache_ways * cfg.cache_line):
        errs.append("cache_bytes must be a multiple of cache_ways * cache_line")
    if not cfg.hwas:
        errs.append("no [hwa ...] sections: at least one accelerator is required")
    owners = {}
    for g in cfg.workloads:
        for p in g.processors:
            if p in owners:
                errs.append(f"processor {p} is in workloads {owners[p]!r} and {g.name!r}")
            owners[p] = g.name
    # every outstanding request must fit the RB, or a full RB can block the
    # shared receive fifo ahead of the payloads that would drain it
    per_hwa = {}
    for g in cfg.workloads:
        for t in g.spec.targets:
            per_hwa[t] = per_hwa.get(t, 0) + len(g.processors) * g.spec.max_outstanding
    for hwa, n in sorted(per_hwa.items()):
        if n > cfg.rb_depth:
            errs.append(f"hwa {hwa}: up to {n} outstanding requests exceed rb_depth {cfg.rb_depth}")
    if any(g.spec.scenario == "memory" for g in cfg.workloads):
        top = 0x1000 + len(cfg.processor_nodes) * SLOTS_PER_PROC * 0x400 + cfg.result_offset
        if top > cfg.mem_bytes:
            errs.append(f"mem_bytes {cfg.mem_bytes:#x} too small for result_offset (needs {top:#x})")
    return errs


def _load(path: Path, text: Optional[str]) -> SimConfig:
    errors: list = []
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    _read_into(parser, path, errors, (), text)
    if errors:
        raise ConfigError(errors)
    cfg = parse_parser(parser, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: Union[str, Path]) -> SimConfig:
    """Load and validate a config file; raises ConfigError listing every problem."""
    path = Path(path)
    if not path.exists():
        path = _resolve(str(path), Path("."))
    return _load(path, None)


def load_string(text: str, base: Union[str, Path] = ".") -> SimConfig:
    """Same as :func:`load_config` for in-memory text; includes resolve from ``base``."""
    return _load(Path(base) / "<string>", text)


FRAGMENTS = {"base"}  # include-only files, not runnable on their own


def builtin_scenarios() -> list:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.cfg") if p.stem not in FRAGMENTS)
