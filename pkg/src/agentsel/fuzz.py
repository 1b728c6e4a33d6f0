"""Seeded random small deployments for the safety suite.

Each case is a mesh or two-level group of 5-15 agents with 20-100 jobs and a
random schedule of crashes (never more than a minority) and link delay spikes.
``check_case`` runs one and returns the safety findings.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .audit import oks_per_epoch
from .runner import Deployment
from .scenario import CrashEvent, LinkEvent, Schedule, Scenario
from .simnet import CasResult
from .topology import LevelSpec, TopologyKind, TopologySpec, agent_id
from .workload import WorkloadSpec


@dataclass
class CaseReport:
    seed: int
    agents: int
    jobs: int
    crashes: int
    end_reason: str
    violations: list = field(default_factory=list)
    double_commits: list = field(default_factory=list)

    @property
    def safe(self) -> bool:
        return not self.violations and not self.double_commits


def random_case(seed: int) -> Scenario:
    rng = random.Random(f"safety:{seed}")
    n = rng.randint(5, 15)
    jobs = rng.randint(20, 100)
    rate = rng.uniform(20.0, 100.0)
    if n >= 9 and rng.random() < 0.25:
        groups = 2
        size = (n - 2) // groups
        topo = TopologySpec(TopologyKind.HIERARCHICAL, groups * size + groups,
                            levels=[LevelSpec(0, groups, size), LevelSpec(1, 1, groups)])
        leaves = groups * size
    else:
        topo = TopologySpec(TopologyKind.MESH, n)
        leaves = n
    span = jobs / rate
    sch = Schedule()
    # crash only leaves, and at most a minority of them, so quorum stays reachable
    for idx in rng.sample(range(leaves), rng.randint(0, (leaves - 1) // 2)):
        sch.crashes.append(CrashEvent(agent_id(idx), round(rng.uniform(0.0, span + 1.0), 3)))
    for _ in range(rng.randint(0, 3)):
        a, b = rng.sample(range(leaves), 2)
        start = rng.uniform(0.0, span)
        sch.delays.append(LinkEvent(agent_id(a), agent_id(b), round(start, 3),
                                    round(start + rng.uniform(0.05, 2.0), 3),
                                    round(rng.uniform(5.0, 300.0), 1)))
    sc = Scenario(name=f"safety-{seed}", topology=topo,
                  workload=WorkloadSpec(job_count=jobs, submission_rate=rate),
                  schedule=sch, seed=seed, budget_s=span + 120.0)
    sc.agent.phase_timeout_s = rng.choice([1.0, 10.0])
    return sc


def check_case(seed: int) -> CaseReport:
    sc = random_case(seed)
    result = Deployment(sc, 0).run()
    log = result.net.store.cas_log
    doubles = [f"{ns}/{key}: {counts}" for (ns, key), counts in oks_per_epoch(log).items()
               if any(c > 1 for c in counts)]
    # a completed job was committed at least once at the leaf level
    leaf_oks = {r.key for r in log if r.outcome is CasResult.OK and r.value_state == "Committed"}
    for rec in result.records:
        if rec.outcome == "Complete" and rec.job_id not in leaf_oks:
            doubles.append(f"{rec.job_id}: completed without a committed record")
    return CaseReport(seed, sc.topology.total_agents, sc.workload.job_count,
                      len(sc.schedule.crashes), result.end_reason,
                      list(result.violations), doubles)
