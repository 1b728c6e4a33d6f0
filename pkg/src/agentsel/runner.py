"""Build a simulated deployment from a scenario, run it, collect metrics and audits."""

from __future__ import annotations

import copy
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .agent import Agent
from .audit import commit_audit, infeasibility_audit, linearizability_audit, lost_job_audit
from .metrics import Collector, selections_csv, summarize, to_csv
from .resilience import UnknownGroup, pool_namespace
from .scenario import Scenario
from .simnet import LatencyModel, LivelockError, SimNet, s_to_ns
from .topology import TopologyKind, agent_id, build_topology
from .types import AgentState
from .workload import generate_agents, generate_jobs

log = logging.getLogger(__name__)


def sub_seed(seed: int, label: str) -> int:
    return zlib.crc32(f"{seed}:{label}".encode())


@dataclass
class RunResult:
    scenario: str
    rep: int
    seed: int
    records: list
    selections: list
    metrics_csv: str
    selections_csv: str
    summary: dict
    violations: list
    end_reason: str
    trace_hash: str
    detections: list
    jobs: dict = field(repr=False, default_factory=dict)
    net: Optional[SimNet] = field(repr=False, default=None)
    survivors: list = field(repr=False, default_factory=list)

    def write(self, out_dir) -> Path:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        stem = f"{self.scenario}-r{self.rep:02d}"
        (d / f"{stem}.csv").write_text(self.metrics_csv)
        (d / f"{stem}-selections.csv").write_text(self.selections_csv)
        (d / f"{stem}-summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True))
        if self.net is not None and self.net.trace_events:
            (d / f"{stem}-trace.jsonl").write_text("\n".join(self.net.trace_lines()) + "\n")
        return d / f"{stem}.csv"


class Deployment:
    """One repetition of a scenario wired onto a fresh simulator."""

    def __init__(self, sc: Scenario, rep: int = 0):
        self.sc = sc
        self.rep = rep
        self.seed = sc.rep_seed(rep)
        seed = self.seed
        topo = copy.deepcopy(sc.topology)
        self.states = build_topology(topo)
        self.leaves = sorted(a for a, s in self.states.items() if s.level == 0)
        self.top_level = max(s.level for s in self.states.values())
        self.top_group = next(s.group_id for s in self.states.values() if s.level == self.top_level)
        net_spec = sc.network
        by_groups = net_spec.placement == "groups" and topo.kind is TopologyKind.HIERARCHICAL
        sites = [net_spec.home] if by_groups else net_spec.sites
        population = generate_agents(sc.profiles, len(self.leaves), sites,
                                     seed=sub_seed(seed, "population"), ids=self.leaves)
        for p in population:
            st = self.states[p.id]
            st.capacity = st.available = p.capacity
            st.connectivity = p.connectivity
            st.profile = p.profile
            if not by_groups:
                st.site = p.site
        for st in self.states.values():
            if st.level > 0 and not by_groups:
                st.site = net_spec.home
        self.population = population
        wl = copy.copy(sc.workload)
        wl.seed = sub_seed(seed, "jobs")
        self.jobs = {j.id: j for j in generate_jobs(wl, population)}

        latency = LatencyModel(dict(net_spec.rtt_ms), tuple(net_spec.intra_site_rtt_ms),
                               net_spec.jitter, seed=sub_seed(seed, "latency"))
        det = sc.detector
        self.net = SimNet(latency, store_site=net_spec.home, costs=sc.processing,
                          seed=sub_seed(seed, "net"), probe_interval_ms=det.channel_probe_interval_ms,
                          probe_trip_count=det.consecutive_probe_failures_to_trip,
                          fast_path=det.fast_path, trace_events=sc.trace)
        self.collector = Collector(self.net.clock, top_group=self.top_group)
        self.net.observers.append(self.collector)
        self.net.store.listeners.append(self.collector.store_write)
        if topo.kind is TopologyKind.RING:
            self.net.set_relay_group(self.states)
        self.agents = {}
        for aid in sorted(self.states):
            self._add_agent(self.states[aid])
        self._next_index = len(self.states)
        self.groups = {s.group_id for s in self.states.values()}
        self._schedule()

    def _make_agent(self, st: AgentState) -> Agent:
        sc = self.sc
        return Agent(st, self.net, params=sc.cost, detector=sc.detector, config=sc.agent,
                     seed=sub_seed(self.seed, st.id))

    def _add_agent(self, st: AgentState) -> None:
        agent = self._make_agent(st)
        self.agents[st.id] = agent
        self.net.add_node(agent, st.site, st.links)
        agent.start()

    def _schedule(self) -> None:
        clock = self.net.clock
        for jid in sorted(self.jobs, key=lambda j: (self.jobs[j].submit_time, j)):
            clock.schedule(self.jobs[jid].submit_time, self._submit, jid)
        for c in self.sc.schedule.crashes:
            if c.agent not in self.states:
                raise KeyError(f"crash schedule names unknown agent {c.agent}")
            clock.schedule(s_to_ns(c.at), self.net.crash, c.agent)
        self._last_join_ns = max((s_to_ns(j.at) for j in self.sc.schedule.joins), default=0)
        for j in self.sc.schedule.joins:
            if j.group not in self.groups:
                raise UnknownGroup(j.group)
            clock.schedule(s_to_ns(j.at), self._join, j.count, j.group)
        for p in self.sc.schedule.partitions:
            self.net.add_partition(p.a, p.b, s_to_ns(p.start), s_to_ns(p.end))
        for d in self.sc.schedule.delays:
            self.net.add_delay_spike(d.a, d.b, s_to_ns(d.start), s_to_ns(d.end),
                                     int(d.extra_ms * 1_000_000))

    def _submit(self, jid: str) -> None:
        job = self.jobs[jid]
        now = self.net.now
        self.net.store.cas(pool_namespace(self.top_group), jid, None, job, now=now, actor="client")
        self.collector.submitted(jid, job.submit_time)
        self.net.record("submit", job=jid)

    def _join(self, count: int, group: str) -> None:
        ids = [agent_id(self._next_index + i) for i in range(count)]
        self._next_index += count
        pop = generate_agents(self.sc.profiles, count, self.sc.network.sites,
                              seed=sub_seed(self.seed, f"join:{ids[0]}"), ids=ids)
        mates = [s for s in self.states.values() if s.group_id == group]
        level = mates[0].level if mates else 0
        parent = mates[0].parent if mates else None
        for p in pop:
            st = AgentState(id=p.id, level=level, group_id=group, parent=parent,
                            capacity=p.capacity, available=p.capacity,
                            connectivity=p.connectivity, site=p.site, profile=p.profile)
            self.states[p.id] = st
            agent = self._make_agent(st)
            self.agents[p.id] = agent
            self.net.join_agent(agent, group)

    # -- running -------------------------------------------------------

    def _done(self) -> bool:
        if self.collector.terminal < len(self.jobs):
            return False
        if self.net.now < self._last_join_ns:
            return False
        crashed = self.net.crash_times
        if crashed:
            seen = {peer for _, peer, _, _ in self.collector.detections}
            if not set(crashed) <= seen and self._survivors_with_peers(crashed):
                return False
        return True

    def _survivors_with_peers(self, crashed) -> bool:
        for aid in crashed:
            for other, a in self.agents.items():
                if self.net.is_up(other) and aid in a.state.peers:
                    return True
        return False

    def run(self) -> RunResult:
        sc = self.sc
        budget = s_to_ns(sc.budget())
        try:
            reason = self.net.run_until(self._done, until=budget, stall_ns=s_to_ns(sc.stall_s))
        except LivelockError as exc:
            reason = "livelock"
            log.warning("%s rep %d: %s", sc.name, self.rep, exc)
        return self._result(reason)

    def _result(self, reason: str) -> RunResult:
        net = self.net
        records = self.collector.records(net.msgs_by_job)
        metrics_text = to_csv(records)
        sel_text = selections_csv(self.collector.selections)
        summary = summarize(metrics_text, sel_text, agents_final=len(self.leaf_agents_final()))
        violations = list(self.collector.violations)
        violations += commit_audit(net.store.cas_log)
        violations += linearizability_audit(net.store.cas_log)
        pools = [pool_namespace(g) for g in sorted(self.groups, key=lambda g: -int(g[1:g.index("-")]))]
        violations += lost_job_audit(records, net.store, pools, set(net.crash_times),
                                     budget_exhausted=reason in ("time_limit", "livelock"))
        if reason == "livelock":
            violations.append("livelock: no progress within the stall window")
        survivors = [self.states[a] for a in self.leaf_agents_final() if net.is_up(a)]
        totals = dict(net.msg_counts)
        summary.update({
            "scenario": self.sc.name,
            "repetition": self.rep,
            "seed": self.seed,
            "end_reason": reason,
            "sim_time_s": round(net.now / 1e9, 9),
            "messages": {**totals, "total": sum(totals.values()), "envelopes": net.envelopes,
                         "dropped": net.dropped},
            "messages_per_job": round(sum(totals.values()) / max(1, len(self.jobs)), 9),
            "crashed": sorted(net.crash_times),
            "detections": _detection_summary(self.collector.detections),
            "stale_messages": sum(a.engine.stale for a in self.agents.values()),
            "early_aborts": sum(a.engine.early_aborts for a in self.agents.values()),
            "phase_timeouts": sum(a.engine.timeouts for a in self.agents.values()),
            "violations": len(violations),
        })
        return RunResult(self.sc.name, self.rep, self.seed, records, self.collector.selections,
                         metrics_text, sel_text, summary, violations, reason,
                         net.trace_hash() if net.trace_events else "", self.collector.detections,
                         self.jobs, net, survivors)

    def leaf_agents_final(self) -> list:
        return sorted(a for a, s in self.states.items() if s.level == 0)


def _detection_summary(detections: list) -> dict:
    out = {}
    for path in ("fast", "fallback"):
        lats = [lat / 1e9 for _, _, p, lat in detections if p == path and lat is not None]
        false_pos = sum(1 for _, _, p, lat in detections if p == path and lat is None)
        out[path] = {
            "count": len(lats),
            "false_positives": false_pos,
            "mean_s": round(sum(lats) / len(lats), 9) if lats else None,
            "min_s": round(min(lats), 9) if lats else None,
            "max_s": round(max(lats), 9) if lats else None,
        }
    return out


def run_scenario(sc: Scenario, rep: int = 0, out_dir=None) -> RunResult:
    result = Deployment(sc, rep).run()
    if out_dir is not None:
        result.write(out_dir)
    return result


def infeasible_against_survivors(result: RunResult) -> list:
    """Incomplete jobs some surviving agent could hold (should be empty)."""
    return infeasibility_audit(result.records, result.jobs, result.survivors)
