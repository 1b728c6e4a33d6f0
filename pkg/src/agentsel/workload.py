"""Synthetic agent populations and feasibility-aware job workloads."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from scipy.optimize import brentq

from .types import AgentState, ConnectivityProfile, Job, JobClass, ResourceVector, fits

DTN_POOL = tuple(f"dtn-{i:02d}" for i in range(10))


class ProfileClass(str, Enum):
    SMALL = "Small"
    MEDIUM = "Medium"
    LARGE = "Large"


PROFILE_CAPACITY = {
    ProfileClass.SMALL: ResourceVector(2, 8, 100, 0),
    ProfileClass.MEDIUM: ResourceVector(4, 16, 250, 0),
    ProfileClass.LARGE: ResourceVector(8, 32, 500, 4),
}


@dataclass
class AgentProfileSpec:
    proportions: dict = field(default_factory=lambda: {
        ProfileClass.SMALL: 0.40, ProfileClass.MEDIUM: 0.25, ProfileClass.LARGE: 0.35})
    capacities: dict = field(default_factory=lambda: dict(PROFILE_CAPACITY))
    dtn_count_range: tuple = (0, 4)
    dtn_score_range: tuple = (0.6, 0.95)
    dtn_pool: tuple = DTN_POOL

    def __post_init__(self):
        if abs(sum(self.proportions.values()) - 1.0) > 1e-9:
            raise ValueError("profile proportions must sum to 1")


# (min, max) per dimension; None = unbounded by class (agent capacity applies)
CLASS_ENVELOPE = {
    JobClass.LIGHTWEIGHT: {"cpu": (None, 0.99), "ram": (None, 3.99)},
    JobClass.STANDARD: {"cpu": (1.0, 2.0), "ram": (4.0, 8.0)},
    JobClass.RESOURCE_INTENSIVE: {"cpu": (2.0, 4.0), "ram": (8.0, 16.0)},
}


@dataclass
class WorkloadSpec:
    job_count: int = 100
    class_mix: dict = field(default_factory=lambda: {
        JobClass.LIGHTWEIGHT: 0.58, JobClass.STANDARD: 0.29, JobClass.RESOURCE_INTENSIVE: 0.13})
    size_bias_exponent: float = 3.0
    walltime_range: tuple = (6.0, 1800.0)
    walltime_mean: float = 180.0
    submission_rate: float = 50.0  # jobs per simulated second
    standard_gpu_fraction: float = 0.10
    intensive_gpu: int = 4
    min_requirement: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-9:
            raise ValueError("class mix must sum to 1")
        lo, hi = self.walltime_range
        if not 0 < lo < self.walltime_mean < hi:
            raise ValueError("walltime mean must lie inside the range")
        if self.submission_rate <= 0:
            raise ValueError("submission rate must be positive")


def largest_remainder(total: int, fractions: Sequence[float]) -> list:
    """Integer counts summing to ``total`` closest to ``total * fractions``."""
    raw = [total * f for f in fractions]
    counts = [math.floor(r) for r in raw]
    short = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def generate_agents(spec: AgentProfileSpec, count: int, sites: Sequence[str] = ("site-0",),
                    seed: int = 0, ids: Optional[Sequence[str]] = None) -> list:
    """Leaf agents with profile capacities, DTN connectivity and round-robin sites."""
    if count <= 0:
        raise ValueError("count must be positive")
    rng = random.Random(seed)
    classes = list(spec.proportions)
    counts = largest_remainder(count, [spec.proportions[c] for c in classes])
    labels = [c for c, n in zip(classes, counts) for _ in range(n)]
    rng.shuffle(labels)
    ids = list(ids) if ids is not None else [f"agent-{i:04d}" for i in range(count)]
    per_class_seen = {c: 0 for c in classes}
    out = []
    lo_n, hi_n = spec.dtn_count_range
    lo_s, hi_s = spec.dtn_score_range
    for aid, cls in zip(ids, labels):
        site = sites[per_class_seen[cls] % len(sites)]
        per_class_seen[cls] += 1
        n_dtn = rng.randint(lo_n, hi_n)
        dtns = rng.sample(spec.dtn_pool, n_dtn)
        scores = {d: rng.uniform(lo_s, hi_s) for d in sorted(dtns)}
        cap = spec.capacities[cls]
        out.append(AgentState(id=aid, capacity=cap, available=cap,
                              connectivity=ConnectivityProfile(scores), site=site,
                              profile=cls.value))
    return out


def truncated_exp_mean(rate: float, lo: float, hi: float) -> float:
    span = hi - lo
    e = math.exp(-rate * span)
    return lo + 1.0 / rate - span * e / (1.0 - e)


def walltime_rate(lo: float, hi: float, mean: float) -> float:
    """Rate of the exponential truncated to [lo, hi] whose mean is ``mean``."""
    return brentq(lambda r: truncated_exp_mean(r, lo, hi) - mean, 1e-6, 10.0, xtol=1e-14)


def sample_walltime(rng: random.Random, rate: float, lo: float, hi: float) -> float:
    u = rng.random()
    span = hi - lo
    return lo - math.log(1.0 - u * (1.0 - math.exp(-rate * span))) / rate


def _biased(rng: random.Random, lo: float, hi: float, exponent: float) -> float:
    if hi <= lo:
        return hi
    return lo + rng.random() ** exponent * (hi - lo)


def _requirements(rng: random.Random, cls: JobClass, cap: ResourceVector,
                  spec: WorkloadSpec) -> ResourceVector:
    env = CLASS_ENVELOPE[cls]
    k = spec.size_bias_exponent
    base = spec.min_requirement

    def dim(name: str, capacity: float) -> float:
        cmin, cmax = env.get(name, (None, None))
        lo = max(base, cmin) if cmin is not None else base
        hi = min(capacity, cmax) if cmax is not None else capacity
        lo = min(lo, hi)
        return _biased(rng, lo, hi, k)

    cpu = dim("cpu", cap.cpu)
    ram = dim("ram", cap.ram)
    disk = dim("disk", cap.disk)
    gpu = 0
    if cls is JobClass.RESOURCE_INTENSIVE:
        gpu = min(spec.intensive_gpu, cap.gpu)
    elif cls is JobClass.STANDARD and cap.gpu >= 1 and rng.random() < spec.standard_gpu_fraction:
        gpu = 1
    return ResourceVector(cpu, ram, disk, gpu)


def generate_jobs(spec: WorkloadSpec, population: Sequence[AgentState], start_ns: int = 0) -> list:
    """Jobs each feasible on the agent they originate from, submitted at a fixed rate."""
    if not population:
        raise ValueError("population must be nonempty")
    rng = random.Random(spec.seed)
    agents = sorted(population, key=lambda a: a.id)
    gpu_agents = [a for a in agents if a.capacity.gpu >= spec.intensive_gpu] or \
        [a for a in agents if a.capacity.gpu > 0]
    classes = list(spec.class_mix)
    counts = largest_remainder(spec.job_count, [spec.class_mix[c] for c in classes])
    labels = [c for c, n in zip(classes, counts) for _ in range(n)]
    rng.shuffle(labels)
    lo_w, hi_w = spec.walltime_range
    rate = walltime_rate(lo_w, hi_w, spec.walltime_mean)
    gap_ns = 1e9 / spec.submission_rate
    jobs = []
    for i, cls in enumerate(labels):
        pool = gpu_agents if cls is JobClass.RESOURCE_INTENSIVE and gpu_agents else agents
        origin = rng.choice(pool)
        req = _requirements(rng, cls, origin.capacity, spec)
        dtns = sorted(origin.connectivity.endpoints())
        chosen = sorted(rng.sample(dtns, rng.randint(0, len(dtns)))) if dtns else []
        data_in = frozenset((d, f"f{i}-{d}-in") for d in chosen)
        data_out = frozenset((d, f"f{i}-{d}-out") for d in chosen if rng.random() < 0.5)
        walltime = sample_walltime(rng, rate, lo_w, hi_w)
        job = Job(id=f"job-{i:05d}", requirements=req, walltime=walltime, data_in=data_in,
                  data_out=data_out, job_class=cls, submit_time=start_ns + int(round(i * gap_ns)),
                  origin=origin.id)
        assert fits(req, origin.capacity), (job, origin)
        jobs.append(job)
    return jobs


def _rv(v: ResourceVector) -> list:
    return [v.cpu, v.ram, v.disk, v.gpu]


def dump_workload(path, agents: Sequence[AgentState], jobs: Sequence[Job]) -> None:
    doc = {
        "agents": [{"id": a.id, "profile": a.profile, "site": a.site, "capacity": _rv(a.capacity),
                    "connectivity": dict(sorted(a.connectivity.scores.items()))} for a in agents],
        "jobs": [{"id": j.id, "class": j.job_class.value, "requirements": _rv(j.requirements),
                  "walltime": j.walltime, "data_in": sorted(j.data_in),
                  "data_out": sorted(j.data_out), "submit_time": j.submit_time,
                  "origin": j.origin} for j in jobs],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_workload(path) -> tuple:
    with open(path) as fh:
        doc = json.load(fh)
    agents = []
    for a in doc["agents"]:
        cap = ResourceVector(*a["capacity"])
        agents.append(AgentState(id=a["id"], capacity=cap, available=cap, site=a["site"],
                                 connectivity=ConnectivityProfile(a["connectivity"]),
                                 profile=a["profile"]))
    jobs = [Job(id=j["id"], requirements=ResourceVector(*j["requirements"]),
                walltime=j["walltime"], data_in=frozenset(map(tuple, j["data_in"])),
                data_out=frozenset(map(tuple, j["data_out"])), job_class=JobClass(j["class"]),
                submit_time=j["submit_time"], origin=j["origin"]) for j in doc["jobs"]]
    return agents, jobs
