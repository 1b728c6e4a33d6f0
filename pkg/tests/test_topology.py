import math

import pytest
from hypothesis import given, strategies as st

from agentsel.topology import (
    AggregatedGroupState, DelegationRecord, EmptyGroup, InvalidSpec, LevelSpec, RingParams,
    TopologyKind, TopologySpec, aggregate_children, agent_id, build_topology, consensus_groups,
    group_feasible, monitor_delegations, ring_neighbors,
)
from agentsel.types import ConnectivityProfile, JobState, ResourceVector
from conftest import make_agent, make_job


def hier(groups=3, size=4):
    return TopologySpec(TopologyKind.HIERARCHICAL, groups * size + groups,
                        levels=[LevelSpec(0, groups, size), LevelSpec(1, 1, groups)])


@pytest.mark.parametrize("spec", [
    TopologySpec(TopologyKind.MESH, 0),
    TopologySpec(TopologyKind.HIERARCHICAL, 10),
    TopologySpec(TopologyKind.HIERARCHICAL, 11, levels=[LevelSpec(0, 3, 3), LevelSpec(1, 1, 3)]),
    TopologySpec(TopologyKind.HIERARCHICAL, 12, levels=[LevelSpec(0, 3, 3), LevelSpec(2, 1, 3)]),
    TopologySpec(TopologyKind.HIERARCHICAL, 13, levels=[LevelSpec(0, 3, 3), LevelSpec(1, 1, 4)]),
    TopologySpec(TopologyKind.HIERARCHICAL, 15, levels=[LevelSpec(0, 3, 3), LevelSpec(1, 2, 3)]),
    TopologySpec(TopologyKind.RING, 10),
    TopologySpec(TopologyKind.RING, 10, ring_params=RingParams(3, 3)),
    TopologySpec(TopologyKind.RING, 4, ring_params=RingParams(2, 2)),
    TopologySpec(TopologyKind.RING, 10, ring_params=RingParams(2, 5, 6)),
])
def test_invalid_specs(spec):
    with pytest.raises(InvalidSpec):
        build_topology(spec)


def test_mesh_everyone_peers():
    agents = build_topology(TopologySpec(TopologyKind.MESH, 6))
    assert len(agents) == 6
    for a in agents.values():
        assert a.peers == set(agents) - {a.id} and a.level == 0 and a.parent is None


def test_hierarchy_wiring():
    agents = build_topology(hier(3, 4))
    leaves = [a for a in agents.values() if a.level == 0]
    coords = [a for a in agents.values() if a.level == 1]
    assert len(leaves) == 12 and len(coords) == 3
    groups = consensus_groups(agents)
    assert len(groups) == 4
    for c in coords:
        assert len(c.children) == 4 and c.peers == {x.id for x in coords} - {c.id}
        for ch in c.children:
            assert agents[ch].parent == c.id and agents[ch].group_id == c.child_group
            assert c.id in agents[ch].links and ch in c.links
        # peers of a leaf are exactly its group mates
        ch = next(iter(c.children))
        assert agents[ch].peers == c.children - {ch}


def test_hierarchy_group_sites():
    spec = hier(2, 2)
    spec.group_sites = ["east", "west"]
    agents = build_topology(spec)
    for c in (a for a in agents.values() if a.level == 1):
        sites = {agents[ch].site for ch in c.children}
        assert sites == {c.site}


def test_ring_overlay():
    spec = TopologySpec(TopologyKind.RING, 10, ring_params=RingParams(2, 5, 1))
    agents = build_topology(spec)
    for a in agents.values():
        assert a.peers == set(agents) - {a.id}
        assert ring_neighbors(spec, a.id) <= a.links
    # member 0 of each ring carries the cross-link
    assert agent_id(5) in agents[agent_id(0)].links
    assert sum(len(a.links) for a in agents.values()) == 2 * (10 + 1)


@pytest.mark.parametrize("rings,size,cross", [(1, 10, 1), (3, 10, 1), (3, 10, 2), (9, 10, 3)])
def test_ring_connected(rings, size, cross):
    spec = TopologySpec(TopologyKind.RING, rings * size, ring_params=RingParams(rings, size, cross))
    agents = build_topology(spec)
    seen, todo = set(), [agent_id(0)]
    while todo:
        a = todo.pop()
        if a not in seen:
            seen.add(a)
            todo.extend(agents[a].links)
    assert seen == set(agents)


def _coord_with(children):
    parent = make_agent("coord", child_group="L0-g000")
    parent.children = {c.id for c in children}
    return parent


def test_aggregate_takes_elementwise_max_and_dtn_union():
    kids = [make_agent("a", cpu=8, ram=4, conn={"d1": 0.5}),
            make_agent("b", cpu=2, ram=32, gpu=4, conn={"d1": 0.9, "d2": 0.6}),
            make_agent("c", cpu=1, ram=1, conn={"d3": 0.7})]
    kids[2].live = False
    agg = aggregate_children(_coord_with(kids), kids)
    assert agg.max_capacity == ResourceVector(8, 32, 250, 4)
    assert agg.dtn_union.scores == {"d1": 0.9, "d2": 0.6}
    assert agg.member_count == 2 and agg.group_id == "L0-g000"


def test_aggregate_errors():
    kids = [make_agent("a")]
    with pytest.raises(EmptyGroup):
        aggregate_children(_coord_with(kids), [])
    with pytest.raises(ValueError):
        aggregate_children(_coord_with(kids), [make_agent("stranger")])
    kids[0].live = False
    with pytest.raises(EmptyGroup):
        aggregate_children(_coord_with(kids), kids)


agent_caps = st.lists(st.tuples(st.floats(0, 64), st.floats(0, 256), st.integers(0, 4),
                                st.dictionaries(st.sampled_from(["d0", "d1", "d2"]),
                                                st.floats(0, 1), max_size=3)),
                      min_size=1, max_size=6)


@given(agent_caps, st.randoms())
def test_aggregate_is_permutation_invariant(caps, rnd):
    kids = [make_agent(f"k{i}", cpu=c, ram=r, gpu=g, conn=d) for i, (c, r, g, d) in enumerate(caps)]
    shuffled = list(kids)
    rnd.shuffle(shuffled)
    parent = _coord_with(kids)
    assert aggregate_children(parent, kids) == aggregate_children(parent, shuffled)


@given(agent_caps, st.floats(0, 64), st.floats(0, 256), st.integers(0, 4),
       st.lists(st.sampled_from(["d0", "d1", "d2"]), max_size=2))
def test_group_feasible_has_no_false_negatives(caps, cpu, ram, gpu, dtns):
    kids = [make_agent(f"k{i}", cpu=c, ram=r, gpu=g, conn=d) for i, (c, r, g, d) in enumerate(caps)]
    agg = aggregate_children(_coord_with(kids), kids)
    job = make_job(cpu=cpu, ram=ram, disk=0, gpu=gpu, dtns=tuple(dtns))
    from agentsel.types import fits
    fits_some = any(fits(job.requirements, k.available) for k in kids)
    reach_some = any(fits(job.requirements, k.available)
                     and all(k.connectivity.score(d) > 0 for d in dtns) for k in kids)
    if reach_some:
        assert group_feasible(agg, job, strict=True)
    if fits_some:
        assert group_feasible(agg, job, strict=False)


def test_group_feasible_strict_requires_reachable_dtns():
    agg = AggregatedGroupState("g", ResourceVector(4, 4, 4, 0), ConnectivityProfile({"d1": 0.5}),
                               1, 0)
    assert group_feasible(agg, make_job(dtns=("d1",)))
    assert not group_feasible(agg, make_job(dtns=("d2",)))
    assert group_feasible(agg, make_job(dtns=("d2",)), strict=False)
    assert not group_feasible(agg, make_job(cpu=5), strict=False)


def test_monitor_delegations():
    recs = [DelegationRecord("a", "g1", 0, 30.0), DelegationRecord("b", "g1", 0, 30.0),
            DelegationRecord("c", "g1", 0, 30.0), DelegationRecord("d", "g1", 0, 30.0),
            DelegationRecord("e", "g1", 25 * 10**9, 30.0)]
    states = {"a": JobState.PENDING, "b": JobState.RUNNING, "c": JobState.INFEASIBLE,
              "e": JobState.PENDING}
    assert monitor_delegations(recs, 31 * 10**9, states) == {"a", "c", "d"}
    assert monitor_delegations(recs, 10 * 10**9, states) == {"c"}


@pytest.mark.parametrize("n", [4, 9, 16, 25, 100])
def test_sqrt_grouping(n):
    g = int(math.isqrt(n))
    agents = build_topology(hier(g, n // g))
    assert sum(1 for a in agents.values() if a.level == 0) == n
