"""Mesh, ring and multi-level hierarchical agent topologies.

Also holds the parent-side pieces of the hierarchy: child aggregation,
optimistic group feasibility and delegation-timeout monitoring.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .types import (
    AgentState,
    ConnectivityProfile,
    Job,
    JobState,
    ResourceVector,
    fits,
    required_dtns,
)

DEFAULT_DELEGATION_TIMEOUT_S = 30.0
DEFAULT_AGG_REFRESH_S = 5.0


class InvalidSpec(ValueError):
    pass


class EmptyGroup(Exception):
    pass


class TopologyKind(str, Enum):
    MESH = "mesh"
    RING = "ring"
    HIERARCHICAL = "hierarchical"


@dataclass(frozen=True)
class LevelSpec:
    level: int
    group_count: int
    group_size: int


@dataclass(frozen=True)
class RingParams:
    ring_count: int
    ring_size: int
    cross_link_count: int = 1


@dataclass
class TopologySpec:
    kind: TopologyKind
    total_agents: int
    levels: list = field(default_factory=list)
    ring_params: Optional[RingParams] = None
    site_map: dict = field(default_factory=dict)
    # optional: one site per level-0 group (and its coordinator chain)
    group_sites: list = field(default_factory=list)
    default_site: str = "site-0"

    def validate(self) -> None:
        if self.total_agents <= 0:
            raise InvalidSpec("total_agents must be positive")
        if self.kind is TopologyKind.HIERARCHICAL:
            if not self.levels:
                raise InvalidSpec("hierarchical topology needs levels")
            levels = sorted(self.levels, key=lambda l: l.level)
            if [l.level for l in levels] != list(range(len(levels))):
                raise InvalidSpec("levels must be numbered 0..k without gaps")
            for l in levels:
                if l.group_count <= 0 or l.group_size <= 0:
                    raise InvalidSpec(f"level {l.level}: counts must be positive")
            for below, above in zip(levels, levels[1:]):
                if above.group_count * above.group_size != below.group_count:
                    raise InvalidSpec(
                        f"level {above.level} has {above.group_count * above.group_size} "
                        f"coordinators for {below.group_count} groups at level {below.level}")
            if levels[-1].group_count != 1:
                raise InvalidSpec("top level must form a single group")
            total = sum(l.group_count * l.group_size for l in levels)
            if total != self.total_agents:
                raise InvalidSpec(f"levels describe {total} agents, total_agents={self.total_agents}")
        elif self.kind is TopologyKind.RING:
            rp = self.ring_params
            if rp is None:
                raise InvalidSpec("ring topology needs ring_params")
            if rp.ring_count * rp.ring_size != self.total_agents:
                raise InvalidSpec(
                    f"{rp.ring_count} rings x {rp.ring_size} != {self.total_agents} agents")
            if rp.ring_size < 3 and rp.ring_count > 0 and rp.ring_size != 1:
                raise InvalidSpec("ring_size must be >= 3")
            if rp.cross_link_count < 0 or rp.cross_link_count > rp.ring_size:
                raise InvalidSpec("cross_link_count must be within [0, ring_size]")


def agent_id(index: int) -> str:
    return f"agent-{index:04d}"


def group_id(level: int, index: int) -> str:
    return f"L{level}-g{index:03d}"


def build_topology(spec: TopologySpec, capacities: Optional[dict] = None) -> dict:
    """Create every agent with level, group, parent/children and peer sets wired.

    Returns a dict id -> AgentState ordered by id. ``capacities`` optionally maps
    level-0 agent ids to (capacity, connectivity, profile) tuples.
    """
    spec.validate()
    if spec.kind is TopologyKind.MESH:
        agents = _build_flat(spec, group_id(0, 0))
        ids = set(agents)
        for a in agents.values():
            a.peers = ids - {a.id}
            a.links = set(a.peers)
    elif spec.kind is TopologyKind.RING:
        agents = _build_flat(spec, group_id(0, 0))
        _wire_ring(spec, agents)
    else:
        agents = _build_hierarchy(spec)
    if capacities:
        for aid, (cap, conn, profile) in capacities.items():
            a = agents[aid]
            a.capacity = cap
            a.available = cap
            a.connectivity = conn
            a.profile = profile
    for aid, site in spec.site_map.items():
        if aid in agents:
            agents[aid].site = site
    return agents


def _build_flat(spec: TopologySpec, gid: str) -> dict:
    return {agent_id(i): AgentState(id=agent_id(i), level=0, group_id=gid,
                                    site=spec.default_site)
            for i in range(spec.total_agents)}


def _wire_ring(spec: TopologySpec, agents: dict) -> None:
    rp = spec.ring_params
    ids = sorted(agents)
    rings = [ids[r * rp.ring_size:(r + 1) * rp.ring_size] for r in range(rp.ring_count)]
    links = {aid: set() for aid in ids}

    def link(a, b):
        if a != b:
            links[a].add(b)
            links[b].add(a)

    for ring in rings:
        n = len(ring)
        for i in range(n):
            link(ring[i], ring[(i + 1) % n])
    if rp.ring_count > 1:
        # member c of ring k bridges to member c of ring k+1+c (mod ring_count)
        for c in range(rp.cross_link_count):
            for k in range(rp.ring_count):
                other = (k + 1 + c) % rp.ring_count
                if other != k:
                    link(rings[k][c], rings[other][c])
    everyone = set(ids)
    for aid, a in agents.items():
        # the whole ring system is one consensus group; messages travel the overlay
        a.peers = everyone - {aid}
        a.links = links[aid]


def ring_neighbors(spec: TopologySpec, aid: str) -> set:
    """The two in-ring neighbours of an agent (excluding cross-links)."""
    rp = spec.ring_params
    idx = int(aid.split("-")[1])
    r, pos = divmod(idx, rp.ring_size)
    base = r * rp.ring_size
    return {agent_id(base + (pos - 1) % rp.ring_size), agent_id(base + (pos + 1) % rp.ring_size)}


def _build_hierarchy(spec: TopologySpec) -> dict:
    levels = sorted(spec.levels, key=lambda l: l.level)
    agents: dict = {}
    next_index = 0
    # members of each group, per level, in order
    groups_by_level: list = []
    for lv in levels:
        groups = []
        for g in range(lv.group_count):
            gid = group_id(lv.level, g)
            members = []
            for _ in range(lv.group_size):
                aid = agent_id(next_index)
                next_index += 1
                agents[aid] = AgentState(id=aid, level=lv.level, group_id=gid,
                                         site=spec.default_site)
                members.append(aid)
            groups.append((gid, members))
        groups_by_level.append(groups)

    for groups in groups_by_level:
        for gid, members in groups:
            mset = set(members)
            for m in members:
                agents[m].peers = mset - {m}
                agents[m].links = set(agents[m].peers)

    # coordinator k at level L (counted across all level-L groups) owns group k of level L-1
    for depth in range(1, len(levels)):
        coordinators = [m for _, members in groups_by_level[depth] for m in members]
        below = groups_by_level[depth - 1]
        for coord, (gid, members) in zip(coordinators, below):
            agents[coord].children = set(members)
            agents[coord].child_group = gid
            for m in members:
                agents[m].parent = coord
                agents[m].links.add(coord)
            agents[coord].links |= set(members)

    if spec.group_sites:
        # a level-0 group, its coordinator chain inherit the group's site
        for (gid, members), site in zip(groups_by_level[0], spec.group_sites):
            for m in members:
                agents[m].site = site
            parent = agents[members[0]].parent
            if parent is not None and agents[parent].site == spec.default_site:
                agents[parent].site = site
    return agents


def consensus_groups(agents: dict) -> dict:
    """group id -> sorted member ids."""
    out: dict = {}
    for a in agents.values():
        out.setdefault(a.group_id, []).append(a.id)
    return {g: sorted(m) for g, m in sorted(out.items())}


@dataclass(frozen=True)
class AggregatedGroupState:
    group_id: str
    max_capacity: ResourceVector
    dtn_union: ConnectivityProfile
    member_count: int
    as_of_version: int
    # largest total capacity of any live child; used for the infeasibility verdict
    max_total: ResourceVector = ResourceVector()


def aggregate_children(parent: AgentState, children: Iterable[AgentState]) -> AggregatedGroupState:
    children = list(children)
    if not children:
        raise EmptyGroup(f"{parent.id} has no children")
    foreign = [c.id for c in children if c.id not in parent.children]
    if foreign:
        raise ValueError(f"{foreign} are not children of {parent.id}")
    live = [c for c in children if c.live]
    if not live:
        raise EmptyGroup(f"all children of {parent.id} are dead")
    scores: dict = {}
    for c in live:
        for d, s in c.connectivity.scores.items():
            if s > 0 and s > scores.get(d, 0.0):
                scores[d] = s
    return AggregatedGroupState(
        group_id=parent.child_group or live[0].group_id,
        max_capacity=ResourceVector.elementwise_max(c.available for c in live),
        dtn_union=ConnectivityProfile(scores),
        member_count=len(live),
        as_of_version=sum(c.version for c in live),
        max_total=ResourceVector.elementwise_max(c.capacity for c in live),
    )


def group_feasible(agg: AggregatedGroupState, job: Job, strict: bool = True) -> bool:
    """Optimistic: dimensions are checked against different children's maxima.

    With ``strict=False`` DTN reachability is left to the cost penalty, as for
    leaves in permissive mode; otherwise a group that cannot reach some
    required endpoint would refuse jobs its children would take.
    """
    if not fits(job.requirements, agg.max_capacity):
        return False
    return not strict or all(agg.dtn_union.score(d) > 0 for d in required_dtns(job))


@dataclass(frozen=True)
class DelegationRecord:
    job_id: str
    target_group: str
    delegated_at: int  # ns
    timeout: float  # seconds


RECLAIMABLE = frozenset({JobState.DELEGATED, JobState.PENDING, JobState.PROPOSED,
                         JobState.PREPARED, JobState.INFEASIBLE})


def monitor_delegations(records: Iterable[DelegationRecord], now: int, job_states: dict) -> set:
    """Job ids whose delegation is older than its timeout and still not taken by a child.

    ``job_states`` maps job id -> the job's state as seen in the child pool; a
    missing entry counts as still pending. Infeasible children verdicts are
    reclaimed immediately.
    """
    out = set()
    for rec in records:
        state = job_states.get(rec.job_id, JobState.PENDING)
        if state not in RECLAIMABLE:
            continue
        if state is JobState.INFEASIBLE or now - rec.delegated_at > rec.timeout * 1e9:
            out.add(rec.job_id)
    return out
