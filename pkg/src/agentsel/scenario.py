"""Scenario files: YAML in, validated ``Scenario`` out, errors pinned to lines.

Top-level keys: name, topology, workload, profiles, cost, detector, agent,
network, processing, schedule, run. Every section is optional except
``topology``; see ``scenarios/`` for complete examples.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .agent import AgentConfig
from .resilience import DetectorConfig
from .selection import CostParams
from .simnet import ProcessingCosts, load_latency_matrix
from .topology import LevelSpec, RingParams, TopologyKind, TopologySpec
from .types import JobClass
from .workload import AgentProfileSpec, ProfileClass, WorkloadSpec

SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    pass


@dataclass
class NetworkSpec:
    sites: list = field(default_factory=lambda: ["site-0"])
    store_site: Optional[str] = None
    rtt_ms: dict = field(default_factory=dict)  # (a, b) -> ms
    intra_site_rtt_ms: tuple = (1.2, 2.0)
    jitter: float = 0.1
    # "round_robin": agents spread over sites per profile class; "groups": one site per level-0 group
    placement: str = "round_robin"

    @property
    def home(self) -> str:
        return self.store_site or self.sites[0]


@dataclass
class CrashEvent:
    agent: str
    at: float


@dataclass
class JoinEvent:
    count: int
    group: str
    at: float


@dataclass
class LinkEvent:
    a: str
    b: str
    start: float
    end: float
    extra_ms: float = 0.0


@dataclass
class Schedule:
    crashes: list = field(default_factory=list)
    joins: list = field(default_factory=list)
    partitions: list = field(default_factory=list)
    delays: list = field(default_factory=list)


@dataclass
class Scenario:
    name: str
    topology: TopologySpec
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    profiles: AgentProfileSpec = field(default_factory=AgentProfileSpec)
    cost: CostParams = field(default_factory=CostParams)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    processing: ProcessingCosts = field(default_factory=ProcessingCosts)
    schedule: Schedule = field(default_factory=Schedule)
    repetitions: int = 1
    seed: int = 0
    budget_s: Optional[float] = None
    stall_s: float = 600.0
    long_running: bool = False
    trace: bool = False

    def budget(self) -> float:
        if self.budget_s is not None:
            return self.budget_s
        span = self.workload.job_count / self.workload.submission_rate
        return span + 2.0 * self.workload.job_count + 300.0

    def rep_seed(self, rep: int) -> int:
        return self.seed * 1_000_003 + rep

    def replace(self, **changes) -> Scenario:
        return dataclasses.replace(self, **changes)


# -- YAML with line numbers --------------------------------------------------

def _line_map(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_map(v, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


class _Ctx:
    def __init__(self, source: str, lines: dict):
        self.source = source
        self.lines = lines

    def error(self, path: tuple, msg: str) -> ConfigError:
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p, 1)
        where = ".".join(str(x) for x in path) or "<root>"
        return ConfigError(f"{self.source}:{line}: {where}: {msg}")


def _section(ctx: _Ctx, doc: dict, key: str, cls, path=(), convert=None):
    raw = doc.get(key)
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ctx.error(path + (key,), "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in raw.items():
        if k not in names:
            raise ctx.error(path + (key, k), f"unknown key (allowed: {', '.join(sorted(names))})")
        kwargs[k] = convert(k, v, path + (key, k)) if convert else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ctx.error(path + (key,), str(exc)) from None


def _num(ctx, path, v, kind=float, minimum=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ctx.error(path, f"expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ctx.error(path, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ctx.error(path, f"must be >= {minimum}")
    return kind(v)


def _topology(ctx: _Ctx, raw) -> TopologySpec:
    path = ("topology",)
    if not isinstance(raw, dict):
        raise ctx.error(path, "topology section is required")
    allowed = {"kind", "total_agents", "levels", "ring", "site_map", "group_sites"}
    for k in raw:
        if k not in allowed:
            raise ctx.error(path + (k,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
    try:
        kind = TopologyKind(str(raw.get("kind", "")).lower())
    except ValueError:
        raise ctx.error(path + ("kind",), "kind must be mesh, ring or hierarchical") from None
    levels = []
    for i, lv in enumerate(raw.get("levels") or []):
        p = path + ("levels", i)
        if isinstance(lv, dict):
            levels.append(LevelSpec(_num(ctx, p + ("level",), lv.get("level", i), int, 0),
                                    _num(ctx, p + ("group_count",), lv.get("group_count"), int, 1),
                                    _num(ctx, p + ("group_size",), lv.get("group_size"), int, 1)))
        elif isinstance(lv, list) and len(lv) == 3:
            levels.append(LevelSpec(*(_num(ctx, p, x, int, 0) for x in lv)))
        else:
            raise ctx.error(p, "level must be {level, group_count, group_size} or a 3-list")
    ring = None
    if "ring" in raw:
        r = raw["ring"] or {}
        p = path + ("ring",)
        ring = RingParams(_num(ctx, p + ("ring_count",), r.get("ring_count"), int, 1),
                          _num(ctx, p + ("ring_size",), r.get("ring_size"), int, 1),
                          _num(ctx, p + ("cross_link_count",), r.get("cross_link_count", 1), int, 0))
    total = raw.get("total_agents")
    if total is None:
        if levels:
            total = sum(l.group_count * l.group_size for l in levels)
        elif ring:
            total = ring.ring_count * ring.ring_size
    spec = TopologySpec(kind=kind, total_agents=_num(ctx, path + ("total_agents",), total, int, 1),
                        levels=levels, ring_params=ring, site_map=dict(raw.get("site_map") or {}),
                        group_sites=list(raw.get("group_sites") or []))
    try:
        spec.validate()
    except ValueError as exc:
        raise ctx.error(path, str(exc)) from None
    return spec


def _workload(ctx: _Ctx, doc: dict) -> WorkloadSpec:
    def convert(k, v, p):
        if k == "class_mix":
            if not isinstance(v, dict):
                raise ctx.error(p, "expected a mapping of class -> fraction")
            try:
                return {JobClass(c): _num(ctx, p + (c,), f) for c, f in v.items()}
            except ValueError:
                raise ctx.error(p, f"classes are {[c.value for c in JobClass]}") from None
        if k == "walltime_range":
            return tuple(_num(ctx, p, x) for x in v)
        if k in ("job_count", "seed", "intensive_gpu"):
            return _num(ctx, p, v, int, 0)
        return _num(ctx, p, v)
    return _section(ctx, doc, "workload", WorkloadSpec, convert=convert)


def _profiles(ctx: _Ctx, doc: dict) -> AgentProfileSpec:
    def convert(k, v, p):
        if k == "proportions":
            return {ProfileClass(c): _num(ctx, p + (c,), f) for c, f in v.items()}
        if k == "capacities":
            from .types import ResourceVector
            return {ProfileClass(c): ResourceVector(*cap) for c, cap in v.items()}
        return tuple(v)
    return _section(ctx, doc, "profiles", AgentProfileSpec, convert=convert)


def _cost(ctx: _Ctx, doc: dict) -> CostParams:
    def convert(k, v, p):
        if k == "class_weights":
            return {JobClass(c): dict(w) for c, w in v.items()}
        if k == "strict_connectivity":
            return bool(v)
        if k in ("cache_capacity", "batch_size"):
            return _num(ctx, p, v, int, 1)
        return _num(ctx, p, v, minimum=0)
    params = _section(ctx, doc, "cost", CostParams, convert=convert)
    if "class_weights" in (doc.get("cost") or {}):
        # unspecified classes keep their defaults
        merged = CostParams().class_weights
        merged.update(params.class_weights)
        params.class_weights = merged
    return params


def _network(ctx: _Ctx, doc: dict, base: Path) -> NetworkSpec:
    raw = doc.get("network") or {}
    path = ("network",)
    allowed = {"sites", "store_site", "rtt_ms", "latency_file", "intra_site_rtt_ms", "jitter",
               "placement"}
    for k in raw:
        if k not in allowed:
            raise ctx.error(path + (k,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
    rtt = {}
    if "latency_file" in raw:
        f = base / raw["latency_file"]
        if not f.exists():
            f = SCENARIO_DIR / raw["latency_file"]
        try:
            rtt = load_latency_matrix(f)
        except OSError as exc:
            raise ctx.error(path + ("latency_file",), str(exc)) from None
    for a, row in (raw.get("rtt_ms") or {}).items():
        for b, v in row.items():
            rtt[(a, b)] = _num(ctx, path + ("rtt_ms", a, b), v, minimum=0)
    sites = list(raw.get("sites") or sorted({s for pair in rtt for s in pair}) or ["site-0"])
    net = NetworkSpec(sites=sites, store_site=raw.get("store_site"), rtt_ms=rtt,
                      intra_site_rtt_ms=tuple(raw.get("intra_site_rtt_ms", (1.2, 2.0))),
                      jitter=_num(ctx, path + ("jitter",), raw.get("jitter", 0.1), minimum=0),
                      placement=raw.get("placement", "round_robin"))
    if net.placement not in ("round_robin", "groups"):
        raise ctx.error(path + ("placement",), "placement must be round_robin or groups")
    if net.home not in net.sites:
        raise ctx.error(path + ("store_site",), f"store site {net.home} not among sites")
    for a in net.sites:
        for b in net.sites:
            if a != b and (a, b) not in rtt and (b, a) not in rtt:
                raise ctx.error(path, f"no RTT between {a} and {b}")
    return net


def _schedule(ctx: _Ctx, doc: dict, base: Path) -> Schedule:
    raw = doc.get("schedule") or {}
    path = ("schedule",)
    if "file" in raw:
        sub = base / raw["file"]
        try:
            text = sub.read_text()
        except OSError as exc:
            raise ctx.error(path + ("file",), str(exc)) from None
        node = yaml.compose(text)
        sub_ctx = _Ctx(str(sub), _line_map(node) if node else {})
        return _schedule(sub_ctx, {"schedule": yaml.safe_load(text) or {}}, sub.parent)
    allowed = {"crashes", "joins", "partitions", "delays"}
    for k in raw:
        if k not in allowed:
            raise ctx.error(path + (k,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
    sch = Schedule()
    for i, c in enumerate(raw.get("crashes") or []):
        p = path + ("crashes", i)
        if "agent" not in c:
            raise ctx.error(p, "crash entry needs an agent")
        sch.crashes.append(CrashEvent(str(c["agent"]), _num(ctx, p + ("at",), c.get("at"), minimum=0)))
    for i, j in enumerate(raw.get("joins") or []):
        p = path + ("joins", i)
        sch.joins.append(JoinEvent(_num(ctx, p + ("count",), j.get("count", 1), int, 1),
                                   str(j.get("group", "L0-g000")),
                                   _num(ctx, p + ("at",), j.get("at"), minimum=0)))
    for key, target in (("partitions", sch.partitions), ("delays", sch.delays)):
        for i, e in enumerate(raw.get(key) or []):
            p = path + (key, i)
            target.append(LinkEvent(str(e["a"]), str(e["b"]),
                                    _num(ctx, p + ("start",), e.get("start"), minimum=0),
                                    _num(ctx, p + ("end",), e.get("end"), minimum=0),
                                    _num(ctx, p + ("extra_ms",), e.get("extra_ms", 0.0), minimum=0)))
    return sch


def scenario_from_dict(doc: dict, source: str = "<dict>", lines: Optional[dict] = None,
                       base: Optional[Path] = None) -> Scenario:
    ctx = _Ctx(source, lines or {})
    base = base or Path(".")
    if not isinstance(doc, dict):
        raise ctx.error((), "scenario must be a mapping")
    allowed = {"name", "topology", "workload", "profiles", "cost", "detector", "agent", "network",
               "processing", "schedule", "run"}
    for k in doc:
        if k not in allowed:
            raise ctx.error((k,), f"unknown section (allowed: {', '.join(sorted(allowed))})")
    if "topology" not in doc:
        raise ctx.error((), "missing required section 'topology'")
    run = doc.get("run") or {}
    run_allowed = {"repetitions", "seed", "budget_s", "stall_s", "long_running", "trace"}
    for k in run:
        if k not in run_allowed:
            raise ctx.error(("run", k), f"unknown key (allowed: {', '.join(sorted(run_allowed))})")
    sc = Scenario(
        name=str(doc.get("name") or Path(source).stem),
        topology=_topology(ctx, doc["topology"]),
        workload=_workload(ctx, doc),
        profiles=_profiles(ctx, doc),
        cost=_cost(ctx, doc),
        detector=_section(ctx, doc, "detector", DetectorConfig),
        agent=_section(ctx, doc, "agent", AgentConfig),
        network=_network(ctx, doc, base),
        processing=_section(ctx, doc, "processing", ProcessingCosts),
        schedule=_schedule(ctx, doc, base),
        repetitions=_num(ctx, ("run", "repetitions"), run.get("repetitions", 1), int, 1),
        seed=_num(ctx, ("run", "seed"), run.get("seed", 0), int, 0),
        budget_s=run.get("budget_s"),
        stall_s=_num(ctx, ("run", "stall_s"), run.get("stall_s", 600.0), minimum=1),
        long_running=bool(run.get("long_running", False)),
        trace=bool(run.get("trace", False)),
    )
    if sc.network.placement == "groups" and sc.topology.kind is TopologyKind.HIERARCHICAL:
        if not sc.topology.group_sites:
            n_groups = sorted(sc.topology.levels, key=lambda l: l.level)[0].group_count
            sc.topology.group_sites = [sc.network.sites[i % len(sc.network.sites)]
                                       for i in range(n_groups)]
    return sc


def load_scenario(path) -> Scenario:
    """Read a scenario file; a bare name resolves to a canned scenario."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = SCENARIO_DIR / f"{path}.yaml"
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else 1
        raise ConfigError(f"{p}:{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    lines = _line_map(node) if node is not None else {}
    return scenario_from_dict(doc or {}, str(p), lines, p.parent)


def canned_scenarios() -> list:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))
