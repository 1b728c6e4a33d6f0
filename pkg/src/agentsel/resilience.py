"""Failure detection, job reselection and group membership changes."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .types import Job, JobState, TERMINAL_STATES

NS = 1_000_000_000


class UnknownGroup(KeyError):
    pass


class StoreUnavailable(RuntimeError):
    pass


@dataclass
class DetectorConfig:
    heartbeat_interval: float = 10.0
    heartbeat_threshold: float = 45.0
    threshold_jitter: float = 0.10
    channel_probe_interval_ms: float = 5.0
    consecutive_probe_failures_to_trip: int = 3
    fast_path: bool = True

    def __post_init__(self):
        if self.heartbeat_threshold * (1 - self.threshold_jitter) <= self.heartbeat_interval:
            raise ValueError("heartbeat threshold must exceed the interval even after jitter")
        if self.consecutive_probe_failures_to_trip < 1:
            raise ValueError("trip count must be at least 1")
        if not 0 <= self.threshold_jitter < 1:
            raise ValueError("jitter must be in [0, 1)")

    def threshold_for(self, agent_id: str, seed: int = 0) -> float:
        """Per-agent jittered threshold, stable for a given (agent, seed)."""
        rng = random.Random(f"{agent_id}:{seed}")
        j = self.threshold_jitter
        return self.heartbeat_threshold * (1.0 + rng.uniform(-j, j))

    @property
    def fallback_bound(self) -> float:
        """Worst-case crash-to-detection time with the fast path disabled."""
        return self.heartbeat_threshold * (1 + self.threshold_jitter) + self.heartbeat_interval


@dataclass
class PeerLiveness:
    last_heartbeat: int = 0
    channel_up: bool = True
    declared_dead_at: Optional[int] = None
    # time the peer was first seen; a silent newcomer is judged from here
    known_since: int = 0


@dataclass
class LivenessView:
    peers: dict = field(default_factory=dict)

    def observe(self, peer: str, heartbeat: int, now: int) -> None:
        p = self.peers.get(peer)
        if p is None:
            self.peers[peer] = PeerLiveness(last_heartbeat=heartbeat, known_since=now)
        elif heartbeat > p.last_heartbeat:
            p.last_heartbeat = heartbeat

    def is_live(self, peer: str, now: int, threshold_ns: int) -> bool:
        """Fallback rule: an open channel or a fresh heartbeat keeps a peer live."""
        p = self.peers.get(peer)
        if p is None or p.declared_dead_at is not None:
            return False
        last = max(p.last_heartbeat, p.known_since)
        return p.channel_up or now - last < threshold_ns

    def live_peers(self) -> set:
        return {k for k, p in self.peers.items() if p.declared_dead_at is None}


class FailureDetector:
    """Two detection paths feeding one liveness view.

    Fast path: a channel-down event from the transport declares the peer dead
    at once. Fallback: heartbeat age beyond this agent's jittered threshold.
    The fallback is evaluated on heartbeat age alone, since a channel that
    never reports trouble must not mask a silent peer.
    """

    def __init__(self, self_id: str, config: DetectorConfig, seed: int = 0):
        self.id = self_id
        self.config = config
        self.threshold_ns = int(config.threshold_for(self_id, seed) * NS)
        self.view = LivenessView()
        self.detections: list = []  # (peer, declared_at, path)

    def add_peer(self, peer: str, now: int, heartbeat: Optional[int] = None) -> None:
        if peer == self.id:
            return
        p = self.view.peers.get(peer)
        if p is None:
            # learned from a heartbeat record: judge its age from the record itself
            since = now if heartbeat is None else heartbeat
            self.view.peers[peer] = PeerLiveness(last_heartbeat=heartbeat or 0, known_since=since)

    def heartbeat_seen(self, peer: str, heartbeat: int, now: int) -> bool:
        """Record a heartbeat; returns True when it re-admits a peer declared dead."""
        p = self.view.peers.get(peer)
        if p is None:
            self.add_peer(peer, now, heartbeat)
            return False
        if heartbeat > p.last_heartbeat:
            p.last_heartbeat = heartbeat
        if p.declared_dead_at is not None and heartbeat > p.declared_dead_at and p.channel_up:
            p.declared_dead_at = None
            p.known_since = now
            return True
        return False

    def channel_event(self, peer: str, up: bool, now: int) -> Optional[str]:
        """Apply a transport channel event; returns "dead", "readmit" or None."""
        p = self.view.peers.get(peer)
        if p is None:
            return None
        p.channel_up = up
        if not up and self.config.fast_path and p.declared_dead_at is None:
            self._declare(peer, now, "fast")
            return "dead"
        if up and p.declared_dead_at is not None and p.last_heartbeat > p.declared_dead_at:
            p.declared_dead_at = None
            p.known_since = now
            return "readmit"
        return None

    def _declare(self, peer: str, now: int, path: str) -> None:
        self.view.peers[peer].declared_dead_at = now
        self.detections.append((peer, now, path))

    def detect_failures(self, now: int) -> set:
        return detect_failures(self, now)

    def live_peers(self) -> set:
        return self.view.live_peers()

    def remove_peer(self, peer: str) -> None:
        self.view.peers.pop(peer, None)


def detect_failures(detector: FailureDetector, now: int) -> set:
    """Newly dead peers by heartbeat age (channel-down events are applied as they arrive)."""
    newly = set()
    for peer, p in detector.view.peers.items():
        if p.declared_dead_at is not None:
            continue
        last = max(p.last_heartbeat, p.known_since)
        if now - last > detector.threshold_ns:
            detector._declare(peer, now, "fallback")
            newly.add(peer)
    return newly


@dataclass(frozen=True)
class Heartbeat:
    """What an agent publishes into its group's state namespace."""

    id: str
    time: int
    version: int
    available: object
    capacity: object
    connectivity: object
    level: int = 0
    group: str = ""
    parent: Optional[str] = None
    agg: object = None
    child_group: Optional[str] = None


def heartbeat_tick(agent, store, now: int, *, agg=None) -> None:
    """Write (id, now, version, available) into the agent's group state namespace."""
    if store is None:
        raise StoreUnavailable("no store")
    store.write(state_namespace(agent.group_id), agent.id,
                Heartbeat(agent.id, now, agent.version, agent.available, agent.capacity,
                          agent.connectivity, agent.level, agent.group_id, agent.parent, agg,
                          agent.child_group))


def pool_namespace(group: str) -> str:
    return f"pool/{group}"


def state_namespace(group: str) -> str:
    return f"state/{group}"


RESETTABLE = frozenset({JobState.PROPOSED, JobState.PREPARED, JobState.COMMITTED,
                        JobState.RUNNING})


def reselect_jobs(pool: dict, dead: Iterable[str], now: int = 0,
                  stuck_timeout_ns: Optional[int] = None) -> dict:
    """Jobs to return to Pending after ``dead`` agents were declared failed.

    ``pool`` maps job id -> Job as last seen in the store. Returns job id ->
    the replacement Job (state Pending, version bumped, owner cleared).
    Delegated jobs are left alone: the child group holds them now.
    """
    dead = set(dead)
    out = {}
    for jid, job in pool.items():
        if job.state in TERMINAL_STATES or job.state not in RESETTABLE:
            continue
        owned_by_dead = job.owner in dead
        stuck = (stuck_timeout_ns is not None and job.selection_end_time is None
                 and job.state in (JobState.PROPOSED, JobState.PREPARED)
                 and job.selection_start_time is not None
                 and now - job.selection_start_time > stuck_timeout_ns)
        if owned_by_dead or stuck:
            out[jid] = job.transition(JobState.PENDING, owner=None, proposal_id=None,
                                      selection_start_time=None, selection_end_time=None)
    return out


def join(net, agent, group_id: str, known_groups: Iterable[str]) -> None:
    """Bring ``agent`` into ``group_id`` on a running simulation."""
    if group_id not in set(known_groups):
        raise UnknownGroup(group_id)
    net.join_agent(agent, group_id)
