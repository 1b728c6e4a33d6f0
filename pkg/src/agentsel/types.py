"""Domain vocabulary: resources, jobs, agents, DTN connectivity, consensus messages."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional

DIMENSIONS = ("cpu", "ram", "disk", "gpu")


class IllegalTransition(Exception):
    """Raised when a job is asked to move along an edge the lifecycle forbids."""


@dataclass(frozen=True, slots=True)
class ResourceVector:
    cpu: float = 0.0
    ram: float = 0.0
    disk: float = 0.0
    gpu: int = 0

    def __post_init__(self):
        if self.cpu < 0 or self.ram < 0 or self.disk < 0 or self.gpu < 0:
            raise ValueError(f"negative resource component: {self}")
        if int(self.gpu) != self.gpu:
            raise ValueError(f"gpu must be integral, got {self.gpu}")

    def as_tuple(self) -> tuple:
        return (self.cpu, self.ram, self.disk, self.gpu)

    def __add__(self, other: ResourceVector) -> ResourceVector:
        return ResourceVector(self.cpu + other.cpu, self.ram + other.ram,
                              self.disk + other.disk, self.gpu + other.gpu)

    def __sub__(self, other: ResourceVector) -> ResourceVector:
        # float subtraction can leave -1e-15 residue; clamp it
        return ResourceVector(max(self.cpu - other.cpu, 0.0), max(self.ram - other.ram, 0.0),
                              max(self.disk - other.disk, 0.0), max(self.gpu - other.gpu, 0))

    def scaled(self, factor: float) -> ResourceVector:
        return ResourceVector(self.cpu * factor, self.ram * factor, self.disk * factor,
                              self.gpu)

    @staticmethod
    def elementwise_max(vectors: Iterable[ResourceVector]) -> ResourceVector:
        cpu = ram = disk = 0.0
        gpu = 0
        for v in vectors:
            cpu = max(cpu, v.cpu)
            ram = max(ram, v.ram)
            disk = max(disk, v.disk)
            gpu = max(gpu, v.gpu)
        return ResourceVector(cpu, ram, disk, gpu)


def fits(req: ResourceVector, avail: ResourceVector) -> bool:
    """True iff ``req`` is component-wise <= ``avail``."""
    return (req.cpu <= avail.cpu and req.ram <= avail.ram
            and req.disk <= avail.disk and req.gpu <= avail.gpu)


def dominates(a: ResourceVector, b: ResourceVector) -> bool:
    """a >= b on every dimension."""
    return fits(b, a)


@dataclass(frozen=True, slots=True)
class DtnEndpoint:
    id: str

    def __str__(self) -> str:
        return self.id


@dataclass(frozen=True)
class ConnectivityProfile:
    """Per-endpoint access quality in [0, 1]; an absent endpoint scores 0."""

    scores: dict = field(default_factory=dict)

    def __post_init__(self):
        for d, s in self.scores.items():
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"score for {d} outside [0,1]: {s}")

    def score(self, dtn: str) -> float:
        return self.scores.get(dtn, 0.0)

    def endpoints(self) -> frozenset:
        return frozenset(d for d, s in self.scores.items() if s > 0)

    def __hash__(self):
        return hash(tuple(sorted(self.scores.items())))


class JobClass(str, Enum):
    LIGHTWEIGHT = "Lightweight"
    STANDARD = "Standard"
    RESOURCE_INTENSIVE = "ResourceIntensive"


class JobState(str, Enum):
    PENDING = "Pending"
    PROPOSED = "Proposed"
    PREPARED = "Prepared"
    COMMITTED = "Committed"
    DELEGATED = "Delegated"
    RUNNING = "Running"
    COMPLETE = "Complete"
    FAILED = "Failed"
    INFEASIBLE = "Infeasible"


_S = JobState
LEGAL_TRANSITIONS: dict[JobState, frozenset] = {
    _S.PENDING: frozenset({_S.PROPOSED, _S.INFEASIBLE}),
    _S.PROPOSED: frozenset({_S.PREPARED, _S.PENDING}),
    _S.PREPARED: frozenset({_S.COMMITTED, _S.PENDING}),
    _S.COMMITTED: frozenset({_S.RUNNING, _S.DELEGATED, _S.PENDING}),
    _S.DELEGATED: frozenset({_S.PENDING}),
    # Running->Pending: the owner died before finishing; restart from scratch
    _S.RUNNING: frozenset({_S.COMPLETE, _S.FAILED, _S.PENDING}),
    _S.COMPLETE: frozenset(),
    _S.FAILED: frozenset(),
    _S.INFEASIBLE: frozenset(),
}
TERMINAL_STATES = frozenset({_S.COMPLETE, _S.FAILED, _S.INFEASIBLE})


@dataclass(frozen=True)
class Job:
    """A workload unit. Instances are immutable; mutation returns a new version."""

    id: str
    requirements: ResourceVector
    walltime: float
    data_in: frozenset = frozenset()
    data_out: frozenset = frozenset()
    job_class: JobClass = JobClass.LIGHTWEIGHT
    state: JobState = JobState.PENDING
    version: int = 0
    submit_time: Optional[int] = None
    selection_start_time: Optional[int] = None
    selection_end_time: Optional[int] = None
    exclusions: frozenset = frozenset()
    owner: Optional[str] = None
    proposal_id: Optional[tuple] = None
    origin: Optional[str] = None

    def __post_init__(self):
        if self.walltime <= 0:
            raise ValueError(f"walltime must be positive: {self.walltime}")
        stamps = [t for t in (self.submit_time, self.selection_start_time,
                              self.selection_end_time) if t is not None]
        if stamps != sorted(stamps):
            raise ValueError(f"job {self.id}: timestamps out of order {stamps}")

    @property
    def required_dtns(self) -> frozenset:
        return required_dtns(self)

    def transition(self, new_state: JobState, **changes) -> Job:
        if new_state not in LEGAL_TRANSITIONS[self.state]:
            raise IllegalTransition(f"job {self.id}: {self.state.value} -> {new_state.value}")
        return replace(self, state=new_state, version=self.version + 1, **changes)

    def mutate(self, **changes) -> Job:
        """Change non-state fields, bumping the version."""
        if "state" in changes or "version" in changes:
            raise ValueError("use transition() for state changes")
        return replace(self, version=self.version + 1, **changes)


def required_dtns(job: Job) -> frozenset:
    """Endpoints named by the job's input and output data, deduplicated."""
    return frozenset(d for d, _ in job.data_in) | frozenset(d for d, _ in job.data_out)


@dataclass
class AgentState:
    id: str
    level: int = 0
    group_id: str = ""
    parent: Optional[str] = None
    children: set = field(default_factory=set)
    peers: set = field(default_factory=set)
    capacity: ResourceVector = ResourceVector()
    available: ResourceVector = ResourceVector()
    connectivity: ConnectivityProfile = ConnectivityProfile()
    version: int = 0
    last_heartbeat: int = 0
    live: bool = True
    site: str = "site-0"
    # direct transport channels; equals peers except for ring overlays
    links: set = field(default_factory=set)
    profile: str = ""
    # coordinators only: the level below group this agent owns
    child_group: Optional[str] = None

    def __post_init__(self):
        if not fits(self.available, self.capacity):
            raise ValueError(f"agent {self.id}: available exceeds capacity")

    @property
    def is_leaf(self) -> bool:
        return self.level == 0

    def set_available(self, available: ResourceVector) -> None:
        if not fits(available, self.capacity):
            raise ValueError(f"agent {self.id}: available {available} exceeds capacity")
        self.available = available
        self.version += 1

    def touch(self) -> None:
        self.version += 1

    def copy(self) -> AgentState:
        return replace(self, children=set(self.children), peers=set(self.peers),
                       links=set(self.links))


class MessageKind(str, Enum):
    PROPOSAL = "PROPOSAL"
    PREPARE = "PREPARE"
    COMMIT = "COMMIT"


@dataclass(frozen=True, slots=True)
class ConsensusMessage:
    kind: MessageKind
    proposal_id: tuple
    job_id: str
    proposer: str
    sender: str
    cost: float = 0.0
    group: str = ""

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError("cost must be non-negative")


def proposal_better(cost_a: float, proposer_a: str, cost_b: float, proposer_b: str) -> bool:
    """Strictly lower cost wins; equal cost goes to the lexicographically smaller id."""
    if cost_a != cost_b:
        return cost_a < cost_b
    return proposer_a < proposer_b
