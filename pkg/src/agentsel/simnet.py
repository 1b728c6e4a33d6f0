"""Deterministic discrete-event substrate.

A virtual clock with a (time, seq) ordered event heap, a site-pair latency
model, a FIFO message transport with partition/delay injection and channel
health events, and a namespaced shared store with linearizable
compare-and-set. ``SimNet`` ties them together and runs agents as single
servers: each agent handles one inbox item at a time, every item costs
simulated processing time, and the outputs of a handler leave the node when
that processing finishes.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional

log = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000


def s_to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def ms_to_ns(ms: float) -> int:
    return int(round(ms * NS_PER_MS))


class LivelockError(RuntimeError):
    pass


class SimClock:
    """Event heap ordered by (time, insertion sequence)."""

    def __init__(self):
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.events_fired = 0
        self.last_progress = 0

    def schedule(self, at: int, fn: Callable, *args) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule in the past: {at} < {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, fn, args))

    def progress(self) -> None:
        self.last_progress = self.now

    def pending(self) -> int:
        return len(self._heap)

    def step(self) -> bool:
        if not self._heap:
            return False
        at, _, fn, args = heapq.heappop(self._heap)
        self.now = at
        self.events_fired += 1
        fn(*args)
        return True

    def run_until(self, stop: Optional[Callable[[], bool]] = None, until: Optional[int] = None,
                  stall_ns: Optional[int] = None, check_every: int = 256) -> str:
        """Fire events in order until ``stop()`` holds, the time limit passes or nothing is left.

        Returns one of "condition", "time_limit", "idle". Raises LivelockError
        when no progress was reported for ``stall_ns`` of simulated time.
        """
        heap = self._heap
        pop = heapq.heappop
        n = 0
        while heap:
            if until is not None and heap[0][0] > until:
                self.now = until
                return "time_limit"
            at, _, fn, args = pop(heap)
            self.now = at
            fn(*args)
            n += 1
            if n >= check_every:
                self.events_fired += n
                n = 0
                if stop is not None and stop():
                    return "condition"
                if stall_ns is not None and self.now - self.last_progress > stall_ns:
                    raise LivelockError(
                        f"no progress since t={self.last_progress / NS_PER_S:.3f}s "
                        f"(now {self.now / NS_PER_S:.3f}s, {len(heap)} events queued)")
        self.events_fired += n
        if stop is not None and stop():
            return "condition"
        return "idle"


@dataclass
class LatencyModel:
    """Round-trip times between sites; one-way delay is half an RTT sample."""

    rtt_ms: dict = field(default_factory=dict)  # (site_a, site_b) -> RTT ms
    intra_site_rtt_ms: tuple = (1.2, 2.0)
    jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self._rng = random.Random(self.seed)
        sym = {}
        for (a, b), v in self.rtt_ms.items():
            if v <= 0:
                raise ValueError(f"RTT {a}-{b} must be positive")
            sym[(a, b)] = v
            sym.setdefault((b, a), v)
        self.rtt_ms = sym

    def rtt(self, site_a: str, site_b: str) -> float:
        if site_a == site_b:
            lo, hi = self.intra_site_rtt_ms
            return (lo + hi) / 2
        try:
            return self.rtt_ms[(site_a, site_b)]
        except KeyError:
            raise KeyError(f"no RTT configured between {site_a} and {site_b}") from None

    def one_way_ns(self, site_a: str, site_b: str) -> int:
        if site_a == site_b:
            lo, hi = self.intra_site_rtt_ms
            return int(self._rng.uniform(lo, hi) * NS_PER_MS / 2)
        base = self.rtt_ms.get((site_a, site_b))
        if base is None:
            base = self.rtt(site_a, site_b)
        j = self.jitter
        return int(base / 2 * (1.0 + self._rng.uniform(-j, j)) * NS_PER_MS)

    def rtt_ns(self, site_a: str, site_b: str) -> int:
        return self.one_way_ns(site_a, site_b) + self.one_way_ns(site_b, site_a)

    @property
    def sites(self) -> set:
        return {s for pair in self.rtt_ms for s in pair}


def load_latency_matrix(path) -> dict:
    """Read a site x site RTT matrix (ms) from CSV: header row of sites, one row per site."""
    import csv

    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header = [h.strip() for h in rows[0][1:]]
    out = {}
    for r in rows[1:]:
        src = r[0].strip()
        for dst, cell in zip(header, r[1:]):
            if src != dst and cell.strip():
                out[(src, dst)] = float(cell)
    return out


# -- shared store -----------------------------------------------------------

class CasResult(str, Enum):
    OK = "Ok"
    CONFLICT = "Conflict"


@dataclass(frozen=True, slots=True)
class CasRecord:
    time: int
    namespace: str
    key: str
    expected: Optional[int]
    outcome: CasResult
    observed: Optional[int]
    new_version: Optional[int]
    actor: str
    value_state: Optional[str] = None


class SharedStore:
    """Namespaced key-value store. Values are versioned per key.

    Operations execute atomically at the instant they are applied, which the
    simulator chooses inside the caller's request/response window, so every
    history is linearizable by construction. CAS outcomes are recorded for audit.
    """

    def __init__(self):
        self._data: dict = {}  # ns -> {key: (version, value)}
        self._logs: dict = {}  # ns -> list of keys in write order
        self.cas_log: list = []
        self.ops = 0
        self.listeners: list = []  # called as f(ns, key, old_value, new_value) on each write

    def _ns(self, ns: str) -> dict:
        d = self._data.get(ns)
        if d is None:
            d = self._data[ns] = {}
            self._logs[ns] = []
        return d

    def read(self, ns: str, key: str):
        self.ops += 1
        return self._ns(ns).get(key)

    def write(self, ns: str, key: str, value) -> int:
        self.ops += 1
        d = self._ns(ns)
        old = d.get(key)
        version = (old[0] + 1) if old else 1
        d[key] = (version, value)
        self._logs[ns].append(key)
        return version

    def cas(self, ns: str, key: str, expected_version: Optional[int], new_value, *,
            now: int = 0, actor: str = "") -> tuple:
        """Install ``new_value`` iff the key's version equals ``expected_version``.

        ``expected_version=None`` means "key absent" (create). ``new_value=None``
        deletes. Returns (CasResult, version after the call).
        """
        self.ops += 1
        d = self._ns(ns)
        old = d.get(key)
        current = old[0] if old else None
        state = getattr(new_value, "state", None)
        state = getattr(state, "value", state)
        if current != expected_version:
            self.cas_log.append(CasRecord(now, ns, key, expected_version, CasResult.CONFLICT,
                                          current, None, actor, state))
            return CasResult.CONFLICT, current
        if new_value is None:
            del d[key]
            version = None
        else:
            version = (current or 0) + 1
            d[key] = (version, new_value)
        self._logs[ns].append(key)
        self.cas_log.append(CasRecord(now, ns, key, expected_version, CasResult.OK, current,
                                      version, actor, state))
        for f in self.listeners:
            f(ns, key, old[1] if old else None, new_value)
        return CasResult.OK, version

    def scan(self, ns: str, since: int = 0) -> tuple:
        """Entries written since cursor ``since``: ([(key, version|None, value|None)], cursor)."""
        self.ops += 1
        d = self._ns(ns)
        log_ = self._logs[ns]
        if since >= len(log_):
            return [], len(log_)
        seen = set()
        out = []
        for key in log_[since:]:
            if key in seen:
                continue
            seen.add(key)
            entry = d.get(key)
            out.append((key, entry[0], entry[1]) if entry else (key, None, None))
        return out, len(log_)

    def items(self, ns: str) -> dict:
        return {k: v for k, (_, v) in self._ns(ns).items()}

    def namespaces(self) -> list:
        return sorted(self._data)


def linearizable_cas_history(records: Iterable[CasRecord]) -> bool:
    """Check that a sequential witness explains every recorded CAS outcome.

    Assumes the logged keys are only ever mutated through CAS. Records are
    replayed in log order against a model register per key: an Ok must have
    expected the model's version, a Conflict must have observed it.
    """
    model: dict = {}
    for r in records:
        k = (r.namespace, r.key)
        current = model.get(k)
        if r.outcome is CasResult.OK:
            if current != r.expected:
                return False
            model[k] = r.new_version
        elif current == r.expected or current != r.observed:
            return False
    return True


# -- transport / runtime ----------------------------------------------------

@dataclass
class ProcessingCosts:
    """Simulated CPU time charged to an agent per unit of work (microseconds)."""

    item_us: float = 20.0
    message_us: float = 60.0
    relay_us: float = 15.0
    eval_miss_us: float = 25.0
    eval_hit_us: float = 2.0
    record_us: float = 2.0


@dataclass
class Partition:
    a: str
    b: str
    start: int
    end: int


@dataclass
class DelaySpike:
    a: str
    b: str
    start: int
    end: int
    extra_ns: int


@dataclass
class Node:
    agent: Any
    site: str
    inbox: deque = field(default_factory=deque)
    busy_until: int = 0
    drain_scheduled: bool = False
    crashed_at: Optional[int] = None
    joined_at: int = 0


class SimNet:
    """Simulated runtime the agents run on.

    Agents talk to it through a narrow surface: ``now``, ``charge``,
    ``broadcast``, ``send``, ``timer``, ``store_op`` and ``trace``.
    """

    def __init__(self, latency: LatencyModel, *, store_site: str = "site-0",
                 costs: Optional[ProcessingCosts] = None, seed: int = 0,
                 probe_interval_ms: float = 5.0, probe_trip_count: int = 3,
                 fast_path: bool = True, trace_events: bool = True):
        self.clock = SimClock()
        self.latency = latency
        self.store = SharedStore()
        self.store_site = store_site
        self.costs = costs or ProcessingCosts()
        self.rng = random.Random(seed ^ 0x5EED)
        self.nodes: dict = {}
        self.partitions: list = []
        self.spikes: list = []
        self.probe_interval_ns = ms_to_ns(probe_interval_ms)
        self.probe_trip_count = probe_trip_count
        self.fast_path = fast_path
        self._last_arrival: dict = {}
        self._relay_trees: dict = {}
        self._overlay: dict = {}  # agent -> set of direct links, for relaying
        self._relay_groups: set = set()
        self._current: Optional[Node] = None
        self._work = 0
        self._out: list = []
        self.trace_events = trace_events
        self.trace: list = []
        self.observers: list = []
        # counters
        self.msg_counts = {"PROPOSAL": 0, "PREPARE": 0, "COMMIT": 0}
        self.msgs_by_job: dict = {}
        self.envelopes = 0
        self.dropped = 0
        self.channel_events: list = []  # (time, observer, peer, "down"/"up")
        self.crash_times: dict = {}

    # -- membership of the simulation ---------------------------------

    @property
    def now(self) -> int:
        return self.clock.now

    def add_node(self, agent, site: str, links: Iterable[str] = ()) -> Node:
        node = Node(agent=agent, site=site, joined_at=self.clock.now)
        self.nodes[agent.id] = node
        self._overlay[agent.id] = set(links)
        self._relay_trees.clear()
        return node

    def join_agent(self, agent, group_id: str) -> Node:
        """Add a running agent mid-simulation, wired to the live members of its group."""
        mates = sorted(aid for aid, n in self.nodes.items()
                       if n.crashed_at is None and n.agent.state.group_id == group_id)
        parent = agent.state.parent
        links = set(mates) | ({parent} if parent else set())
        node = self.add_node(agent, agent.state.site, links)
        for m in links:
            self.link(agent.id, m)
        self.record("join", agent=agent.id, group=group_id)
        agent.start()
        return node

    def link(self, a: str, b: str) -> None:
        self._overlay.setdefault(a, set()).add(b)
        self._overlay.setdefault(b, set()).add(a)
        self._relay_trees.clear()

    def set_relay_group(self, members: Iterable[str]) -> None:
        """Broadcasts among these agents travel the overlay links hop by hop."""
        self._relay_groups = set(members)
        self._relay_trees.clear()

    def is_up(self, aid: str) -> bool:
        node = self.nodes.get(aid)
        return node is not None and node.crashed_at is None

    def crash(self, aid: str) -> None:
        node = self.nodes[aid]
        if node.crashed_at is not None:
            return
        now = self.clock.now
        node.crashed_at = now
        node.inbox.clear()
        self.crash_times[aid] = now
        self._relay_trees.clear()
        self.record("crash", agent=aid)
        if hasattr(node.agent, "on_crash"):
            node.agent.on_crash(now)
        for other, onode in self.nodes.items():
            if other == aid or onode.crashed_at is not None:
                continue
            if aid in self._overlay.get(other, ()):
                self._schedule_channel(other, aid, "down", now + self._detect_delay())
        self.clock.progress()

    def _detect_delay(self) -> int:
        # first failing probe lands somewhere inside one probe interval
        return ((self.probe_trip_count - 1) * self.probe_interval_ns
                + int(self.rng.uniform(0, 1) * self.probe_interval_ns))

    def _schedule_channel(self, observer: str, peer: str, kind: str, at: int) -> None:
        if not self.fast_path:
            return
        self.clock.schedule(at, self._channel_event, observer, peer, kind)

    def _channel_event(self, observer: str, peer: str, kind: str) -> None:
        self.channel_events.append((self.clock.now, observer, peer, kind))
        self._arrive(observer, ("channel", peer, kind))

    def add_partition(self, a: str, b: str, start: int, end: int) -> None:
        self.partitions.append(Partition(a, b, start, end))
        trip = self.probe_trip_count * self.probe_interval_ns
        if end - start > trip:
            self.clock.schedule(start + trip, self._channel_pair, a, b, "down")
            self.clock.schedule(end, self._channel_pair, a, b, "up")

    def add_delay_spike(self, a: str, b: str, start: int, end: int, extra_ns: int) -> None:
        self.spikes.append(DelaySpike(a, b, start, end, extra_ns))
        trip = self.probe_trip_count * self.probe_interval_ns
        # probes time out when a spike outlasts the trip window
        if extra_ns > trip and end - start > trip:
            self.clock.schedule(start + trip, self._channel_pair, a, b, "down")
            self.clock.schedule(end, self._channel_pair, a, b, "up")

    def _channel_pair(self, a: str, b: str, kind: str) -> None:
        if self.is_up(a) and self.is_up(b):
            self._channel_event(a, b, kind)
            self._channel_event(b, a, kind)

    def _partitioned(self, a: str, b: str, t: int) -> bool:
        for p in self.partitions:
            if p.start <= t < p.end and ((p.a == a and p.b == b) or (p.a == b and p.b == a)):
                return True
        return False

    def _spike(self, a: str, b: str, t: int) -> int:
        extra = 0
        for s in self.spikes:
            if s.start <= t < s.end and ((s.a == a and s.b == b) or (s.a == b and s.b == a)):
                extra = max(extra, s.extra_ns)
        return extra

    # -- agent-facing surface ----------------------------------------

    def charge(self, ns: float) -> None:
        self._work += int(ns)

    def charge_us(self, us: float) -> None:
        self._work += int(us * 1000)

    def send(self, src: str, dst: str, msgs: list) -> None:
        self._out.append(("send", dst, msgs))

    def broadcast(self, src: str, members: Iterable[str], msgs: list) -> None:
        self._out.append(("bcast", tuple(sorted(members)), msgs))

    def timer(self, aid: str, delay_ns: int, item) -> None:
        self.clock.schedule(self.clock.now + max(int(delay_ns), 0), self._arrive, aid, item)

    def store_op(self, aid: str, op: Callable, tag) -> None:
        """Run ``op(store)`` at the store and deliver ("store", tag, result) back."""
        self._out.append(("store", op, tag))

    def record(self, kind: str, **fields) -> None:
        if self.trace_events:
            fields["t"] = self.clock.now
            fields["ev"] = kind
            self.trace.append(fields)
        for obs in self.observers:
            obs(kind, self.clock.now, fields)

    # -- event machinery ---------------------------------------------

    def _arrive(self, aid: str, item) -> None:
        node = self.nodes.get(aid)
        if node is None or node.crashed_at is not None:
            return
        if not node.inbox and node.busy_until <= self.clock.now:
            self._process(node, item)
            return
        node.inbox.append(item)
        if not node.drain_scheduled:
            node.drain_scheduled = True
            self.clock.schedule(max(node.busy_until, self.clock.now), self._drain, aid)

    def _drain(self, aid: str) -> None:
        node = self.nodes[aid]
        node.drain_scheduled = False
        if node.crashed_at is not None or not node.inbox:
            return
        self._process(node, node.inbox.popleft())
        if node.inbox:
            node.drain_scheduled = True
            self.clock.schedule(node.busy_until, self._drain, aid)

    def _process(self, node: Node, item) -> None:
        self._current = node
        self._work = int(self.costs.item_us * 1000)
        self._out = []
        relay = None
        if item[0] == "msgs":
            _, origin, msgs, depart, root = item
            self._work += int(self.costs.message_us * 1000) * len(msgs)
            if root is not None:
                relay = (origin, msgs, root)
        node.agent.handle(item)
        if relay is not None:
            children = self._tree_children(relay[2], node.agent.id)
            if children:
                self._work += int(self.costs.relay_us * 1000) * len(children)
        end = self.clock.now + self._work
        node.busy_until = end
        out = self._out
        self._out = []
        self._current = None
        src = node.agent.id
        if relay is not None:
            origin, msgs, root = relay
            for child in self._tree_children(root, src):
                self._transmit(src, child, origin, msgs, end, root)
        for kind, target, payload in out:
            if kind == "bcast":
                self._broadcast_out(src, target, payload, end)
            elif kind == "send":
                self._transmit(src, target, src, payload, end, None)
            else:
                self._store_out(node, target, payload, end)

    def _broadcast_out(self, src: str, members: tuple, msgs: list, depart: int) -> None:
        if src in self._relay_groups:
            for child in self._tree_children(src, src):
                self._transmit(src, child, src, msgs, depart, src)
            return
        for dst in members:
            if dst != src:
                self._transmit(src, dst, src, msgs, depart, None)

    def _count(self, msgs: list) -> None:
        counts = self.msg_counts
        by_job = self.msgs_by_job
        for m in msgs:
            counts[m.kind.value] += 1
            by_job[m.job_id] = by_job.get(m.job_id, 0) + 1

    def _transmit(self, src: str, dst: str, origin: str, msgs: list, depart: int, root) -> None:
        self.envelopes += 1
        self._count(msgs)
        dnode = self.nodes.get(dst)
        if dnode is None:
            return
        if self.partitions and self._partitioned(src, dst, depart):
            self.dropped += 1
            return
        snode = self.nodes[src]
        delay = self.latency.one_way_ns(snode.site, dnode.site)
        if self.spikes:
            delay += self._spike(src, dst, depart)
        arrival = depart + delay
        key = (src, dst)
        last = self._last_arrival.get(key, 0)
        if arrival < last:
            arrival = last
        self._last_arrival[key] = arrival
        self.clock.schedule(arrival, self._deliver, src, dst, ("msgs", origin, msgs, depart, root))

    def _deliver(self, src: str, dst: str, item) -> None:
        snode = self.nodes[src]
        if snode.crashed_at is not None and snode.crashed_at < item[3]:
            self.dropped += 1
            return
        self._arrive(dst, item)

    def _store_out(self, node: Node, op: Callable, tag, depart: int) -> None:
        rtt = self.latency.rtt_ns(node.site, self.store_site)
        half = rtt // 2
        self.clock.schedule(depart + half, self._store_apply, node.agent.id, op, tag, depart, rtt - half)

    def _store_apply(self, aid: str, op: Callable, tag, depart: int, back: int) -> None:
        node = self.nodes[aid]
        if node.crashed_at is not None and node.crashed_at < depart:
            return
        result = op(self.store)
        self.clock.schedule(self.clock.now + back, self._arrive, aid, ("store", tag, result))

    def _tree_children(self, root: str, at: str) -> list:
        tree = self._relay_trees.get(root)
        if tree is None:
            tree = self._build_tree(root)
            self._relay_trees[root] = tree
        return tree.get(at, [])

    def _build_tree(self, root: str) -> dict:
        # BFS over live overlay links; children sorted for determinism
        children: dict = {}
        seen = {root}
        frontier = [root]
        while frontier:
            nxt = []
            for a in frontier:
                for b in sorted(self._overlay.get(a, ())):
                    if b in seen or b not in self._relay_groups or not self.is_up(b):
                        continue
                    seen.add(b)
                    children.setdefault(a, []).append(b)
                    nxt.append(b)
            frontier = nxt
        return children

    def hop_counts(self, root: str) -> dict:
        depth = {root: 0}
        stack = [root]
        while stack:
            a = stack.pop()
            for c in self._tree_children(root, a):
                depth[c] = depth[a] + 1
                stack.append(c)
        return depth

    # -- running -----------------------------------------------------

    def run_until(self, stop=None, until: Optional[int] = None, stall_ns: Optional[int] = None) -> str:
        return self.clock.run_until(stop, until, stall_ns)

    def trace_lines(self) -> list:
        return [json.dumps(ev, sort_keys=True, default=_json_default) for ev in self.trace]

    def trace_hash(self) -> str:
        h = hashlib.sha256()
        for line in self.trace_lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()


def _json_default(o):
    if isinstance(o, Enum):
        return o.value
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if isinstance(o, tuple):
        return list(o)
    return str(o)
