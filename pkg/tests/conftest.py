import pytest

from agentsel.scenario import Scenario
from agentsel.topology import LevelSpec, RingParams, TopologyKind, TopologySpec
from agentsel.types import AgentState, ConnectivityProfile, Job, JobClass, ResourceVector
from agentsel.workload import WorkloadSpec


def make_job(jid="job-0", cpu=1.0, ram=1.0, disk=1.0, gpu=0, walltime=10.0, dtns=(),
             job_class=JobClass.LIGHTWEIGHT, **kw) -> Job:
    data_in = frozenset((d, f"{jid}-{d}") for d in dtns)
    return Job(id=jid, requirements=ResourceVector(cpu, ram, disk, gpu), walltime=walltime,
               data_in=data_in, job_class=job_class, **kw)


def make_agent(aid="agent-0000", cpu=4.0, ram=16.0, disk=250.0, gpu=0, conn=None, **kw) -> AgentState:
    cap = ResourceVector(cpu, ram, disk, gpu)
    return AgentState(id=aid, capacity=cap, available=cap,
                      connectivity=ConnectivityProfile(conn or {}), **kw)


def small_scenario(kind="mesh", agents=5, jobs=20, rate=50.0, seed=3, **kw) -> Scenario:
    if kind == "mesh":
        topo = TopologySpec(TopologyKind.MESH, agents)
    elif kind == "ring":
        topo = TopologySpec(TopologyKind.RING, agents, ring_params=RingParams(1, agents))
    else:
        groups, size = kw.pop("groups", 2), kw.pop("size", 3)
        topo = TopologySpec(TopologyKind.HIERARCHICAL, groups * size + groups,
                            levels=[LevelSpec(0, groups, size), LevelSpec(1, 1, groups)])
    return Scenario(name=f"t-{kind}-{agents}", topology=topo,
                    workload=WorkloadSpec(job_count=jobs, submission_rate=rate), seed=seed, **kw)


@pytest.fixture
def job():
    return make_job()


@pytest.fixture
def agent():
    return make_agent()


@pytest.fixture
def verdict(request):
    """Record a named acceptance verdict for the terminal summary."""
    def record(name: str, ok: bool, detail: str = "") -> None:
        request.config.stash.setdefault(_VERDICTS, []).append((name, bool(ok), detail))
    return record


_VERDICTS = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(_VERDICTS, [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(rows, key=lambda r: int(r[0].split()[0][1:])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
