import textwrap

import pytest

from agentsel.scenario import ConfigError, canned_scenarios, load_scenario, scenario_from_dict
from agentsel.topology import TopologyKind, build_topology
from agentsel.types import JobClass


def write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


@pytest.mark.parametrize("name", canned_scenarios())
def test_canned_scenarios_load_and_build(name):
    sc = load_scenario(name)
    assert sc.name == name
    agents = build_topology(sc.topology)
    assert len(agents) == sc.topology.total_agents
    assert sc.repetitions >= 1


def test_expected_canned_set():
    names = set(canned_scenarios())
    for n in ["mesh-10-100", "mesh-30-500", "hier-30-500", "ring-30", "hier-110-1000",
              "mesh-30-500-fail-1", "mesh-30-500-fail-15", "join-10s", "join-60s",
              "mesh-30-3site", "hier-30-3site"]:
        assert n in names


def test_full_document(tmp_path):
    p = write(tmp_path, """
        name: demo
        topology:
          kind: hierarchical
          levels:
            - {level: 0, group_count: 2, group_size: 3}
            - [1, 1, 2]
        workload:
          job_count: 40
          submission_rate: 10
          class_mix: {Lightweight: 0.5, Standard: 0.5, ResourceIntensive: 0.0}
        cost: {beta: 2.0, theta: 0.2}
        network:
          sites: [a, b]
          rtt_ms: {a: {b: 40}}
        schedule:
          crashes: [{agent: agent-0001, at: 3.5}]
          joins: [{count: 2, group: L0-g001, at: 5}]
        run: {repetitions: 3, seed: 9}
    """)
    sc = load_scenario(p)
    assert sc.name == "demo" and sc.topology.kind is TopologyKind.HIERARCHICAL
    assert sc.topology.total_agents == 8
    assert sc.workload.class_mix[JobClass.STANDARD] == 0.5
    assert sc.cost.beta == 2.0 and sc.cost.theta == 0.2
    assert sc.network.rtt_ms[("a", "b")] == 40
    assert sc.schedule.crashes[0].at == 3.5 and sc.schedule.joins[0].count == 2
    assert (sc.repetitions, sc.seed) == (3, 9)
    assert sc.rep_seed(1) != sc.rep_seed(2)


@pytest.mark.parametrize("body,line,fragment", [
    ("topology:\n  kind: mesh\n  total_agents: 5\nbogus: 1\n", 4, "unknown section"),
    ("topology:\n  kind: blob\n", 2, "kind must be"),
    ("topology:\n  kind: mesh\n  total_agents: 5\nworkload:\n  job_count: many\n", 5,
     "expected a number"),
    ("topology:\n  kind: mesh\n  total_agents: 5\ncost:\n  gamma: 1\n", 5, "unknown key"),
    ("topology:\n  kind: ring\n  total_agents: 10\n  ring: {ring_count: 3, ring_size: 3}\n", 1,
     "rings"),
    ("topology:\n  kind: mesh\n  total_agents: 5\nnetwork:\n  sites: [a, b]\n", 4, "no RTT"),
    ("topology:\n  kind: mesh\n  total_agents: 5\nrun:\n  seed: 1.5\n", 5, "integer"),
    ("topology: [\n", 2, "invalid YAML"),
])
def test_errors_point_at_lines(tmp_path, body, line, fragment):
    p = write(tmp_path, body)
    with pytest.raises(ConfigError) as exc:
        load_scenario(p)
    msg = str(exc.value)
    assert f"{p}:{line}:" in msg or f"s.yaml:{line}:" in msg, msg
    assert fragment in msg


def test_missing_topology():
    with pytest.raises(ConfigError, match="topology"):
        scenario_from_dict({"name": "x"})


def test_missing_file():
    with pytest.raises(ConfigError):
        load_scenario("/nonexistent/file.yaml")


def test_schedule_file(tmp_path):
    write(tmp_path, "crashes:\n  - {agent: agent-0000, at: 1}\n", "sched.yaml")
    p = write(tmp_path, "topology: {kind: mesh, total_agents: 3}\nschedule: {file: sched.yaml}\n")
    assert load_scenario(p).schedule.crashes[0].agent == "agent-0000"


def test_budget_default_scales_with_jobs():
    sc = scenario_from_dict({"topology": {"kind": "mesh", "total_agents": 3},
                             "workload": {"job_count": 100, "submission_rate": 50}})
    assert sc.budget() == pytest.approx(2.0 + 200.0 + 300.0)
