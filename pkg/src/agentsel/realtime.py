"""Wall-clock binding for soak testing.

``RealtimeNet`` offers the same agent-facing surface as ``SimNet`` (``now``,
``timer``, ``send``, ``broadcast``, ``store_op``, ``record``) on top of an
asyncio event loop, so the unchanged ``Agent`` code runs against real timers.
Each agent drains its own queue in its own task; latency is injected with
``call_later``. Runs are not deterministic: interleavings depend on the host.
``speed`` > 1 compresses time (a 1 s agent timer fires after 1/speed s).
"""

from __future__ import annotations

import asyncio
import copy
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .agent import Agent
from .audit import commit_audit, linearizability_audit
from .metrics import Collector
from .resilience import pool_namespace
from .runner import sub_seed
from .scenario import Scenario
from .simnet import LatencyModel, SharedStore
from .topology import build_topology
from .workload import generate_agents, generate_jobs

log = logging.getLogger(__name__)

NS = 1_000_000_000


@dataclass
class _Node:
    agent: Agent
    site: str
    queue: asyncio.Queue
    task: Optional[asyncio.Task] = None
    crashed: bool = False


@dataclass
class RealtimeReport:
    scenario: str
    wall_s: float
    jobs: int
    complete: int
    violations: list = field(default_factory=list)
    messages: dict = field(default_factory=dict)


class RealtimeNet:
    def __init__(self, latency: LatencyModel, store_site: str, speed: float = 1.0):
        self.latency = latency
        self.store_site = store_site
        self.speed = speed
        self.store = SharedStore()
        self.nodes: dict = {}
        self.observers: list = []
        self.msg_counts: Counter = Counter()
        self.msgs_by_job: dict = {}
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._t0 = 0.0

    # -- clock ---------------------------------------------------------

    def bind(self, loop: asyncio.AbstractEventLoop) -> None:
        self._loop = loop
        self._t0 = time.monotonic()

    @property
    def now(self) -> int:
        return int((time.monotonic() - self._t0) * self.speed * NS)

    def _later(self, delay_ns: int, fn: Callable, *args) -> None:
        self._loop.call_later(max(delay_ns, 0) / NS / self.speed, fn, *args)

    # -- membership ----------------------------------------------------

    def add_node(self, agent: Agent, site: str) -> None:
        node = _Node(agent, site, asyncio.Queue())
        self.nodes[agent.id] = node
        node.task = self._loop.create_task(self._serve(node))
        agent.start()

    def crash(self, aid: str) -> None:
        node = self.nodes[aid]
        if node.crashed:
            return
        node.crashed = True
        node.task.cancel()
        self.record("crash", agent=aid)
        node.agent.on_crash(self.now)
        for other, onode in self.nodes.items():
            if other != aid and not onode.crashed:
                onode.queue.put_nowait(("channel", aid, "down"))

    def is_up(self, aid: str) -> bool:
        node = self.nodes.get(aid)
        return node is not None and not node.crashed

    async def _serve(self, node: _Node) -> None:
        while True:
            item = await node.queue.get()
            node.agent.handle(item)

    def _deliver(self, aid: str, item) -> None:
        node = self.nodes.get(aid)
        if node is not None and not node.crashed:
            node.queue.put_nowait(item)

    # -- agent-facing surface ------------------------------------------

    def charge_us(self, us: float) -> None:
        pass  # real processing time is spent for real

    def timer(self, aid: str, delay_ns: int, item) -> None:
        self._later(int(delay_ns), self._deliver, aid, item)

    def send(self, src: str, dst: str, msgs: list) -> None:
        self._transmit(src, dst, msgs)

    def broadcast(self, src: str, members: Iterable[str], msgs: list) -> None:
        for dst in sorted(members):
            if dst != src:
                self._transmit(src, dst, msgs)

    def _transmit(self, src: str, dst: str, msgs: list) -> None:
        for m in msgs:
            self.msg_counts[m.kind.value] += 1
            self.msgs_by_job[m.job_id] = self.msgs_by_job.get(m.job_id, 0) + 1
        dnode = self.nodes.get(dst)
        if dnode is None:
            return
        delay = self.latency.one_way_ns(self.nodes[src].site, dnode.site)
        self._later(delay, self._deliver, dst, ("msgs", src, msgs, self.now, None))

    def store_op(self, aid: str, op: Callable, tag) -> None:
        rtt = self.latency.rtt_ns(self.nodes[aid].site, self.store_site)
        half = rtt // 2
        self._later(half, self._store_apply, aid, op, tag, rtt - half)

    def _store_apply(self, aid: str, op: Callable, tag, back: int) -> None:
        if not self.is_up(aid):
            return
        result = op(self.store)
        self._later(back, self._deliver, aid, ("store", tag, result))

    def record(self, kind: str, **fields) -> None:
        now = self.now
        for obs in self.observers:
            obs(kind, now, fields)


def run_realtime(sc: Scenario, rep: int = 0, speed: float = 10.0,
                 wall_limit_s: float = 60.0) -> RealtimeReport:
    """Run a scenario on wall-clock timers; returns when every job is terminal or time runs out."""
    return asyncio.run(_run(sc, rep, speed, wall_limit_s))


async def _run(sc: Scenario, rep: int, speed: float, wall_limit_s: float) -> RealtimeReport:
    seed = sc.rep_seed(rep)
    topo = copy.deepcopy(sc.topology)
    states = build_topology(topo)
    leaves = sorted(a for a, s in states.items() if s.level == 0)
    top_level = max(s.level for s in states.values())
    top_group = next(s.group_id for s in states.values() if s.level == top_level)
    net_spec = sc.network
    population = generate_agents(sc.profiles, len(leaves), net_spec.sites,
                                 seed=sub_seed(seed, "population"), ids=leaves)
    for p in population:
        st = states[p.id]
        st.capacity = st.available = p.capacity
        st.connectivity = p.connectivity
        st.profile = p.profile
        st.site = p.site
    for st in states.values():
        if st.level > 0:
            st.site = net_spec.home
    wl = copy.copy(sc.workload)
    wl.seed = sub_seed(seed, "jobs")
    jobs = generate_jobs(wl, population)

    latency = LatencyModel(dict(net_spec.rtt_ms), tuple(net_spec.intra_site_rtt_ms),
                           net_spec.jitter, seed=sub_seed(seed, "latency"))
    net = RealtimeNet(latency, net_spec.home, speed=speed)
    loop = asyncio.get_running_loop()
    net.bind(loop)
    collector = Collector(None, top_group=top_group)
    net.observers.append(collector)
    net.store.listeners.append(collector.store_write)
    for aid in sorted(states):
        agent = Agent(states[aid], net, params=sc.cost, detector=sc.detector, config=sc.agent,
                      seed=sub_seed(seed, aid))
        net.add_node(agent, states[aid].site)

    def submit(job) -> None:
        net.store.cas(pool_namespace(top_group), job.id, None, job, now=net.now, actor="client")
        collector.submitted(job.id, net.now)

    for job in jobs:
        net._later(job.submit_time, submit, job)
    for c in sc.schedule.crashes:
        net._later(int(c.at * NS), net.crash, c.agent)

    start = time.monotonic()
    while time.monotonic() - start < wall_limit_s:
        await asyncio.sleep(0.05)
        if len(collector.jobs) == len(jobs) and collector.terminal >= len(jobs):
            break
    wall = time.monotonic() - start
    for node in net.nodes.values():
        if node.task is not None:
            node.task.cancel()
    await asyncio.gather(*(n.task for n in net.nodes.values() if n.task), return_exceptions=True)

    violations = list(collector.violations)
    violations += commit_audit(net.store.cas_log)
    violations += linearizability_audit(net.store.cas_log)
    records = collector.records(net.msgs_by_job)
    complete = sum(1 for r in records if r.outcome == "Complete")
    log.info("%s realtime: %d/%d complete in %.1f s", sc.name, complete, len(jobs), wall)
    return RealtimeReport(sc.name, wall, len(jobs), complete, violations, dict(net.msg_counts))
