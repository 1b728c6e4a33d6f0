"""Feasibility, data-aware cost, candidate thresholding and the version-keyed cost cache."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

from .topology import AggregatedGroupState, group_feasible
from .types import AgentState, ConnectivityProfile, Job, JobClass, ResourceVector, fits, required_dtns

INF = math.inf

DEFAULT_CLASS_WEIGHTS = {
    JobClass.LIGHTWEIGHT: {"cpu": 0.4, "ram": 0.3, "disk": 0.2, "gpu": 0.1},
    JobClass.STANDARD: {"cpu": 0.4, "ram": 0.3, "disk": 0.2, "gpu": 0.1},
    JobClass.RESOURCE_INTENSIVE: {"cpu": 0.25, "ram": 0.25, "disk": 0.1, "gpu": 0.4},
}
DATA_WEIGHT_SHIFT = 0.1


class DivisionByZero(ZeroDivisionError):
    """A job needs a dimension the agent has none of; feasibility should have caught it."""


@dataclass
class CostParams:
    class_weights: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_CLASS_WEIGHTS.items()})
    data_weight_shift: float = DATA_WEIGHT_SHIFT
    beta: float = 1.0
    tau: float = 20.0
    theta: float = 0.10
    cache_ttl: float = 60.0
    cache_capacity: int = 65_536
    batch_size: int = 8
    strict_connectivity: bool = False

    def __post_init__(self):
        for cls, w in self.class_weights.items():
            total = sum(w.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"weights for {cls} sum to {total}, expected 1.0")
            if any(v < 0 for v in w.values()):
                raise ValueError(f"negative weight for {cls}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.beta < 0 or self.theta < 0:
            raise ValueError("beta and theta must be non-negative")

    @property
    def alpha(self) -> float:
        return 1.0 / self.tau

    def weights_for(self, job: Job) -> dict:
        w = dict(self.class_weights[job.job_class])
        if required_dtns(job):
            shift = min(self.data_weight_shift, w["cpu"])
            w["cpu"] -= shift
            w["disk"] += shift
        return w


class ResourceView(NamedTuple):
    """What a selecting agent knows about one row of the cost matrix."""

    id: str
    available: ResourceVector
    connectivity: ConnectivityProfile
    version: int
    # coordinators: aggregated child state and the group it stands for
    agg: Optional[AggregatedGroupState] = None
    group: Optional[str] = None


def view_of(agent: AgentState) -> ResourceView:
    return ResourceView(agent.id, agent.available, agent.connectivity, agent.version)


def conn_feasible(agent, job: Job, strict: bool = False) -> bool:
    if not strict:
        return True
    conn = agent.connectivity
    return all(conn.score(d) > 0 for d in required_dtns(job))


def feasible(agent, job: Job, params: Optional[CostParams] = None) -> bool:
    strict = params.strict_connectivity if params else False
    agg = getattr(agent, "agg", None)
    if agg is not None:
        if getattr(agent, "group", None) in job.exclusions:
            return False
        return group_feasible(agg, job, strict)
    if getattr(agent, "live", True) is False:
        return False
    return fits(job.requirements, agent.available) and conn_feasible(agent, job, strict)


def mean_connectivity(agent, job: Job) -> Optional[float]:
    dtns = required_dtns(job)
    if not dtns:
        return None
    conn = agent.connectivity
    return sum(conn.score(d) for d in sorted(dtns)) / len(dtns)


def connectivity_penalty(agent, job: Job, params: CostParams) -> float:
    s_bar = mean_connectivity(agent, job)
    if s_bar is None:
        return 1.0
    return 1.0 + params.beta * (1.0 - s_bar)


def long_job_penalty(job: Job, params: CostParams) -> float:
    if job.walltime > params.tau:
        return params.alpha * (job.walltime - params.tau)
    return 0.0


def _util(req: float, avail: float) -> float:
    if req == 0:
        return 0.0
    if avail == 0:
        raise DivisionByZero(f"requirement {req} against zero availability")
    return req / avail


def utilization(agent, job: Job, params: CostParams) -> float:
    w = params.weights_for(job)
    r = job.requirements
    a = agent.available
    total = 0.0
    for dim, req, avail in (("cpu", r.cpu, a.cpu), ("ram", r.ram, a.ram),
                            ("disk", r.disk, a.disk), ("gpu", r.gpu, a.gpu)):
        if w[dim] == 0 and req == 0:
            continue
        total += w[dim] * _util(req, avail)
    return total


def cost(agent, job: Job, params: CostParams) -> float:
    """Weighted utilization plus penalties.

    The connectivity penalty enters as (P_conn - 1) so that perfect access adds
    nothing and no access adds beta.
    """
    return (utilization(agent, job, params)
            + (connectivity_penalty(agent, job, params) - 1.0)
            + long_job_penalty(job, params))


class CacheKey(NamedTuple):
    agent_id: str
    job_id: str
    agent_version: int
    job_version: int


class CostCache:
    """LRU + TTL memo of cost values keyed by (agent, job, versions)."""

    def __init__(self, capacity: int = 65_536, ttl_s: float = 60.0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.ttl_ns = int(ttl_s * 1e9)
        self._entries: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._entries)

    def cached_cost(self, key: CacheKey, compute: Callable[[], float], now: int = 0) -> float:
        entry = self._entries.get(key)
        if entry is not None:
            value, stored_at = entry
            if now - stored_at < self.ttl_ns:
                self.hits += 1
                self._entries.move_to_end(key)
                return value
            del self._entries[key]
        self.misses += 1
        value = compute()
        self._entries[key] = (value, now)
        if len(self._entries) > self.capacity:
            self._entries.popitem(last=False)
            self.evictions += 1
        return value

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


@dataclass
class CostMatrix:
    rows: list
    cols: list
    entries: dict  # (agent_id, job_id) -> cost or INF

    def get(self, agent_id: str, job_id: str) -> float:
        return self.entries.get((agent_id, job_id), INF)

    def column_min(self, job_id: str) -> float:
        return min((self.get(a, job_id) for a in self.rows), default=INF)

    def argmin(self, job_id: str) -> Optional[str]:
        best = None
        best_cost = INF
        for a in sorted(self.rows):
            c = self.get(a, job_id)
            if c < best_cost:
                best, best_cost = a, c
        return best


def infeasible_jobs(matrix: CostMatrix) -> list:
    return [j for j in matrix.cols if matrix.column_min(j) == INF]


def select_candidates(matrix: CostMatrix, self_id: str, params: CostParams,
                      batch: Optional[int] = None) -> list:
    """(self, job, cost) triples where self is within theta of the column minimum.

    Ordered by ascending cost, at most ``batch`` of them. Jobs whose whole
    column is infinite are never returned.
    """
    limit = params.batch_size if batch is None else batch
    out = []
    for job_id in matrix.cols:
        c_star = matrix.column_min(job_id)
        if c_star == INF:
            continue
        mine = matrix.get(self_id, job_id)
        if mine <= (1.0 + params.theta) * c_star:
            out.append((self_id, job_id, mine))
    out.sort(key=lambda t: (t[2], t[1]))
    return out[:limit]


class Selector:
    """Per-agent selection engine: cached costs, matrix construction, candidates."""

    def __init__(self, params: CostParams, use_cache: bool = True):
        self.params = params
        self.cache = CostCache(params.cache_capacity, params.cache_ttl) if use_cache else None
        self.evaluations = 0  # cost evaluations actually computed

    def entry(self, view: ResourceView, job: Job, now: int = 0) -> float:
        """One matrix entry: cost if feasible, INF otherwise."""
        if self.cache is None:
            return self._compute(view, job)
        key = CacheKey(view.id, job.id, view.version, job.version)
        return self.cache.cached_cost(key, lambda: self._compute(view, job), now)

    def _compute(self, view, job: Job) -> float:
        self.evaluations += 1
        if not feasible(view, job, self.params):
            return INF
        return cost(view, job, self.params)

    def build_matrix(self, views: Sequence[ResourceView], jobs: Sequence[Job], now: int = 0) -> CostMatrix:
        entries = {}
        for v in views:
            for j in jobs:
                entries[(v.id, j.id)] = self.entry(v, j, now)
        return CostMatrix([v.id for v in views], [j.id for j in jobs], entries)

    def candidates(self, me: ResourceView, peers: Iterable[ResourceView], jobs: Sequence[Job],
                   now: int = 0, batch: Optional[int] = None) -> list:
        """Same answer as select_candidates(build_matrix(...)) with early exits.

        A job is skipped as soon as self is infeasible or some peer undercuts
        self by more than theta, so most peer rows are never evaluated.
        """
        peers = list(peers)
        limit = self.params.batch_size if batch is None else batch
        factor = 1.0 + self.params.theta
        out = []
        for j in jobs:
            mine = self.entry(me, j, now)
            if mine == INF:
                continue
            beaten = False
            for p in peers:
                c = self.entry(p, j, now)
                if mine > factor * c:
                    beaten = True
                    break
            if not beaten:
                out.append((me.id, j.id, mine))
        out.sort(key=lambda t: (t[2], t[1]))
        return out[:limit]
