"""Agent runtime: resource agents (level 0) and coordinators (level > 0).

An agent only talks to its runtime (``env``): it receives inbox items one at a
time through ``handle`` and reacts by charging processing time, broadcasting
consensus messages, arming timers and issuing store operations. The same code
runs under the discrete-event simulator and the wall-clock driver.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Optional

from .consensus import ConsensusEngine, Direction, Phase
from .resilience import (
    DetectorConfig,
    FailureDetector,
    Heartbeat,
    pool_namespace,
    reselect_jobs,
    state_namespace,
)
from .selection import CostParams, ResourceView, Selector
from .simnet import CasResult
from .topology import (
    AggregatedGroupState,
    DelegationRecord,
    EmptyGroup,
    aggregate_children,
    monitor_delegations,
)
from .types import (
    AgentState,
    ConnectivityProfile,
    Job,
    JobState,
    ResourceVector,
    TERMINAL_STATES,
    fits,
)

log = logging.getLogger(__name__)

NS = 1_000_000_000


@dataclass
class AgentConfig:
    tick_interval_s: float = 0.1
    selection_window: int = 32
    max_inflight: int = 16
    decision_grace_s: float = 1.0
    phase_timeout_s: float = 10.0
    buffer_window_s: float = 2.0
    delegation_timeout_s: float = 30.0
    agg_refresh_s: float = 5.0
    # coordinators stop nominating while this many delegated jobs per live child wait below
    backlog_per_child: float = 2.0
    execution_scale: float = 0.01
    use_cache: bool = True
    retry_interval_s: float = 1.0


def _vmin(a: ResourceVector, b: ResourceVector) -> ResourceVector:
    return ResourceVector(min(a.cpu, b.cpu), min(a.ram, b.ram), min(a.disk, b.disk),
                          min(a.gpu, b.gpu))


@dataclass
class Outgoing:
    proposal_id: tuple
    job: Job  # local copy walking Proposed -> Prepared -> Committed
    store_version: int
    started_at: int
    finalizing: bool = False


@dataclass
class RunningJob:
    job: Job
    version: Optional[int] = None  # store version of the Running record once confirmed
    finished: bool = False
    released: bool = False
    token: int = 0  # tells a rerun of the same job apart from a stale earlier one


class Agent:
    def __init__(self, state: AgentState, env, *, params: Optional[CostParams] = None,
                 detector: Optional[DetectorConfig] = None, config: Optional[AgentConfig] = None,
                 seed: int = 0, children: Optional[set] = None):
        self.state = state
        self.id = state.id
        self.env = env
        self.params = params or CostParams()
        self.config = config or AgentConfig()
        cfg = self.config
        self.selector = Selector(self.params, use_cache=cfg.use_cache)
        self.engine = ConsensusEngine(self.id, set(state.peers), group=state.group_id,
                                      phase_timeout_ns=int(cfg.phase_timeout_s * NS),
                                      buffer_window_ns=int(cfg.buffer_window_s * NS))
        self.detector = FailureDetector(self.id, detector or DetectorConfig(), seed)
        for p in sorted(state.peers | state.children):
            self.detector.add_peer(p, env.now)
        self.rng = random.Random(f"{self.id}:{seed}")
        self.tick_ns = int(cfg.tick_interval_s * NS)
        self.grace_ns = int(cfg.decision_grace_s * NS)

        self.pool_ns = pool_namespace(state.group_id)
        self.state_ns = state_namespace(state.group_id)
        self.coordinator = state.level > 0
        self.child_pool_ns = pool_namespace(state.child_group) if self.coordinator else None
        self.child_state_ns = state_namespace(state.child_group) if self.coordinator else None
        namespaces = [self.pool_ns, self.state_ns]
        if self.coordinator:
            namespaces += [self.child_pool_ns, self.child_state_ns]
        self.cursors = {ns: 0 for ns in namespaces}

        self.pool: dict = {}  # job id -> (store version, Job)
        self.peer_hb: dict = {}
        self.child_pool: dict = {}
        self.child_hb: dict = {}
        self.outgoing: dict = {}
        self.running: dict = {}
        self.run_seq = 0
        self.delegations: dict = {}
        self.reserved = ResourceVector()
        self.agg: Optional[AggregatedGroupState] = None
        self.agg_version = 0
        self.view_version = 0
        self.dirty = True
        self.scan_pending = False
        self.publish_needed = True
        self.last_agg_refresh = 0
        self.last_round = 0
        self.crashed = False
        self.pending_ops: set = set()  # (kind, job id) store ops in flight
        self._pending_delegate: dict = {}

    # -- helpers -----------------------------------------------------------

    @property
    def level(self) -> int:
        return self.state.level

    def live_peers(self) -> set:
        return self.detector.live_peers() & self.state.peers

    def members(self) -> set:
        return self.live_peers() | {self.id}

    def effective_available(self) -> ResourceVector:
        return self.state.available - self.reserved

    def _bump_view(self) -> None:
        self.view_version += 1
        self.dirty = True

    def _record(self, kind: str, **fields) -> None:
        fields["agent"] = self.id
        self.env.record(kind, **fields)

    def _cas(self, ns: str, key: str, expected, new, tag) -> None:
        env, actor = self.env, self.id
        self.pending_ops.add((tag[0], key))
        self.env.store_op(self.id, lambda st: (
            *st.cas(ns, key, expected, new, now=env.now, actor=actor), env.now), tag)

    # -- entry point ---------------------------------------------------------

    def start(self) -> None:
        """Arm the first tick and heartbeat at a random phase."""
        offset = int(self.rng.uniform(0, self.tick_ns))
        self.env.timer(self.id, offset, ("tick",))
        self.env.timer(self.id, 0, ("hb",))

    def on_crash(self, now: int) -> None:
        self.crashed = True

    def handle(self, item) -> None:
        kind = item[0]
        if kind == "msgs":
            self._on_msgs(item[2])
        elif kind == "store":
            self._on_store(item[1], item[2])
        elif kind == "tick":
            self._on_tick()
        elif kind == "hb":
            self._publish()
            self.env.timer(self.id, int(self.detector.config.heartbeat_interval * NS), ("hb",))
        elif kind == "channel":
            self._on_channel(item[1], item[2])
        elif kind == "done":
            self._on_done(item[1], item[2])
        self._flush()

    def _flush(self) -> None:
        engine = self.engine
        while engine.outbox or engine.events:
            out, events = engine.drain()
            for ev, rec, reason in events:
                self._on_engine_event(ev, rec, reason)
            if out:
                self.env.broadcast(self.id, engine.members, out)

    # -- consensus ------------------------------------------------------------

    def _job_open(self, job_id: str) -> bool:
        entry = self.pool.get(job_id)
        # an unseen job is taken on trust: the proposal is how we learn of it
        return entry is None or entry[1].state is JobState.PENDING

    def _on_msgs(self, msgs) -> None:
        now = self.env.now
        engine = self.engine
        for m in msgs:
            if m.sender == self.id:
                continue
            engine.dispatch(m, now, self._job_open(m.job_id))

    def _on_engine_event(self, ev: str, rec, reason) -> None:
        out = self.outgoing.get(rec.job_id)
        if out is None or out.proposal_id != rec.proposal_id:
            if ev == "decided":
                self.dirty = True
            return
        now = self.env.now
        if ev == "aborted":
            self._release_outgoing(rec.job_id)
            self._record("abort", job=rec.job_id, pid=rec.proposal_id, reason=reason)
        elif ev == "prepared":
            out.job = out.job.transition(JobState.PREPARED)
        elif ev == "finalize":
            out.finalizing = True
            if out.job.state is JobState.PROPOSED:
                # commit quorum can form from peers' votes before we counted our prepares
                out.job = out.job.transition(JobState.PREPARED)
            job = out.job.transition(
                JobState.COMMITTED, owner=self.id, proposal_id=rec.proposal_id,
                selection_start_time=max(out.started_at, out.job.submit_time or 0),
                selection_end_time=now)
            out.job = job
            self._cas(self.pool_ns, rec.job_id, out.store_version, job, ("commit", rec.job_id))

    def _release_outgoing(self, job_id: str) -> None:
        out = self.outgoing.pop(job_id, None)
        if out is not None and not self.coordinator:
            self.reserved = self.reserved - out.job.requirements
            self._bump_view()
        self.dirty = True

    # -- store results --------------------------------------------------------

    def _on_store(self, tag, result) -> None:
        kind = tag[0]
        if kind == "scan":
            self._on_scan(result)
            return
        if kind == "written":
            return
        job_id = tag[1]
        self.pending_ops.discard((kind, job_id))
        outcome, version, at = result
        ok = outcome is CasResult.OK
        handler = getattr(self, f"_after_{kind}")
        if len(tag) > 2:
            r = self.running.get(job_id)
            if r is None or r.token != tag[2]:
                return  # reply for a run we already gave up
        handler(job_id, ok, version, at)

    def _after_commit(self, job_id, ok, version, at) -> None:
        out = self.outgoing.get(job_id)
        if out is None:
            return
        if not ok:
            self._record("conflict", job=job_id)
            self._release_outgoing(job_id)
            return
        job = out.job
        self.pool[job_id] = (version, job)
        del self.outgoing[job_id]
        self._record("commit", job=job_id, level=self.level, group=self.state.group_id,
                     pid=out.proposal_id, start=job.selection_start_time, end=at)
        if self.coordinator:
            self._delegate(job_id, job, version)
            return
        # an earlier run of this job was reset away from us; its resources go back
        self._release_running(job_id)
        # reservation becomes real usage
        self.reserved = self.reserved - job.requirements
        self.state.set_available(self.state.available - job.requirements)
        self._bump_view()
        self.publish_needed = True
        self.run_seq += 1
        run = job.transition(JobState.RUNNING)
        self.running[job_id] = RunningJob(run, token=self.run_seq)
        self._cas(self.pool_ns, job_id, version, run, ("run", job_id, self.run_seq))
        duration = max(1, int(job.walltime * self.config.execution_scale * NS))
        self.env.timer(self.id, duration, ("done", job_id, self.run_seq))

    def _after_run(self, job_id, ok, version, at) -> None:
        r = self.running.get(job_id)
        if r is None:
            return
        if not ok:
            # someone reset the job (we were presumed dead); give it up
            self._record("preempted", job=job_id)
            self._release_running(job_id)
            return
        r.version = version
        self.pool[job_id] = (version, r.job)
        self._record("run", job=job_id)
        if r.finished:
            self._complete(job_id, r)

    def _on_done(self, job_id: str, token: int) -> None:
        r = self.running.get(job_id)
        if r is None or r.token != token:
            return
        r.finished = True
        if r.version is not None:
            self._complete(job_id, r)

    def _complete(self, job_id: str, r: RunningJob) -> None:
        done = r.job.transition(JobState.COMPLETE)
        self._cas(self.pool_ns, job_id, r.version, done, ("complete", job_id, r.token))
        self._release_running(job_id, keep=True)

    def _release_running(self, job_id: str, keep: bool = False) -> None:
        r = self.running.get(job_id) if keep else self.running.pop(job_id, None)
        if r is None or r.released:
            return
        r.released = True
        self.state.set_available(_vmin(self.state.available + r.job.requirements,
                                       self.state.capacity))
        self._bump_view()
        self.publish_needed = True

    def _after_complete(self, job_id, ok, version, at) -> None:
        r = self.running.pop(job_id, None)
        if ok and r is not None:
            self.pool[job_id] = (version, r.job.transition(JobState.COMPLETE))
            self._record("complete", job=job_id, level=self.level, end=at)
        else:
            self._record("complete_conflict", job=job_id)

    def _after_infeasible(self, job_id, ok, version, at) -> None:
        if ok:
            self._record("infeasible", job=job_id, level=self.level,
                         top=self.state.parent is None)

    def _after_reset(self, job_id, ok, version, at) -> None:
        if ok:
            self._record("reset", job=job_id, level=self.level, group=self.state.group_id)
            self.dirty = True

    # -- delegation (coordinators) ---------------------------------------------

    def _delegate(self, job_id: str, job: Job, version: int) -> None:
        child = Job(id=job.id, requirements=job.requirements, walltime=job.walltime,
                    data_in=job.data_in, data_out=job.data_out, job_class=job.job_class,
                    submit_time=job.submit_time, exclusions=job.exclusions, origin=job.origin)
        self._pending_delegate[job_id] = (job, version)
        self._cas(self.child_pool_ns, job_id, None, child, ("handoff", job_id))

    def _after_handoff(self, job_id, ok, version, at) -> None:
        job, top_version = self._pending_delegate.pop(job_id)
        if not ok:
            # a stale record lingers below; put the job back up for selection
            back = job.transition(JobState.PENDING, owner=None, proposal_id=None,
                                  selection_start_time=None, selection_end_time=None)
            self._cas(self.pool_ns, job_id, top_version, back, ("reset", job_id))
            return
        self.child_pool[job_id] = (version, None)
        delegated = job.transition(JobState.DELEGATED)
        self.delegations[job_id] = DelegationRecord(job_id, self.state.child_group, self.env.now,
                                                    self.config.delegation_timeout_s)
        self._record("delegate", job=job_id, group=self.state.child_group)
        self._cas(self.pool_ns, job_id, top_version, delegated, ("delegated", job_id))

    def _after_delegated(self, job_id, ok, version, at) -> None:
        if ok:
            entry = self.pool.get(job_id)
            if entry is not None:
                self.pool[job_id] = (version, entry[1].transition(JobState.DELEGATED)
                                     if entry[1].state is JobState.COMMITTED else entry[1])

    def _check_delegations(self) -> None:
        if not self.delegations:
            return
        now = self.env.now
        states = {}
        for jid in self.delegations:
            entry = self.child_pool.get(jid)
            if entry is not None and entry[1] is not None:
                states[jid] = entry[1].state
        for jid in list(self.delegations):
            if states.get(jid) in (JobState.COMPLETE, JobState.FAILED):
                del self.delegations[jid]
        for jid in sorted(monitor_delegations(self.delegations.values(), now, states)):
            if ("reclaim", jid) in self.pending_ops:
                continue
            entry = self.child_pool.get(jid)
            if entry is None:
                continue
            self._cas(self.child_pool_ns, jid, entry[0], None, ("reclaim", jid))

    def _after_reclaim(self, job_id, ok, version, at) -> None:
        if not ok:
            return
        rec = self.delegations.pop(job_id, None)
        self.child_pool.pop(job_id, None)
        entry = self.pool.get(job_id)
        if rec is None or entry is None:
            return
        ver, job = entry
        back = job.transition(JobState.PENDING, owner=None, proposal_id=None,
                              selection_start_time=None, selection_end_time=None,
                              exclusions=job.exclusions | {rec.target_group})
        self._record("reclaim", job=job_id, group=rec.target_group)
        self._cas(self.pool_ns, job_id, ver, back, ("reset", job_id))

    # -- periodic work -----------------------------------------------------------

    def _on_tick(self) -> None:
        now = self.env.now
        self.engine.expire(now)
        dead = self.detector.detect_failures(now)
        if dead:
            self._on_dead(dead)
        if now - self.last_round >= self.config.retry_interval_s * NS:
            # pending jobs skipped for room or reservations get another look
            self.dirty = True
        self._request_scan()
        if self.publish_needed:
            self._publish()
        self.env.timer(self.id, self.tick_ns, ("tick",))

    def _request_scan(self) -> None:
        if self.scan_pending:
            return
        self.scan_pending = True
        cursors = dict(self.cursors)
        self.env.store_op(self.id, lambda st: {ns: st.scan(ns, c) for ns, c in cursors.items()},
                          ("scan",))

    def _publish(self) -> None:
        self.publish_needed = False
        now = self.env.now
        s = self.state
        if self.coordinator:
            agg = self.agg
            if agg is None:
                hb = Heartbeat(self.id, now, self.agg_version, ResourceVector(), ResourceVector(),
                               ConnectivityProfile(), s.level, s.group_id, s.parent, None,
                               s.child_group)
            else:
                hb = Heartbeat(self.id, now, self.agg_version, agg.max_capacity, agg.max_total,
                               agg.dtn_union, s.level, s.group_id, s.parent, agg, s.child_group)
        else:
            hb = Heartbeat(self.id, now, s.version, s.available, s.capacity, s.connectivity,
                           s.level, s.group_id, s.parent)
        ns, key = self.state_ns, self.id
        self.env.store_op(self.id, lambda st: st.write(ns, key, hb), ("written",))

    def _on_channel(self, peer: str, kind: str) -> None:
        now = self.env.now
        verdict = self.detector.channel_event(peer, kind == "up", now)
        if verdict == "dead":
            self._on_dead({peer})
        elif verdict == "readmit":
            self._readmit(peer)

    def _on_dead(self, dead: set) -> None:
        now = self.env.now
        for peer, at, path in self.detector.detections[-len(dead):]:
            self._record("detect", peer=peer, path=path)
        self.engine.set_members(self.members(), now)
        if self.coordinator and dead & self.state.children:
            self._refresh_agg(force=True)
        self._reselect_all()
        self.dirty = True

    def _readmit(self, peer: str) -> None:
        # treated as a fresh join: whatever we remembered about it is gone
        self._record("readmit", peer=peer)
        self.engine.set_members(self.members(), self.env.now)
        if self.coordinator and peer in self.state.children:
            self._refresh_agg(force=True)
        self.dirty = True

    def _dead_set(self) -> set:
        return {p for p, l in self.detector.view.peers.items() if l.declared_dead_at is not None}

    def _reselect_all(self) -> None:
        dead = self._dead_set()
        if not dead:
            return
        view = {jid: job for jid, (_, job) in self.pool.items() if job is not None}
        self._issue_resets(reselect_jobs(view, dead, self.env.now), self.pool, self.pool_ns)

    def _issue_resets(self, resets: dict, pool: dict, ns: str) -> None:
        for jid in sorted(resets):
            if ("reset", jid) in self.pending_ops:
                continue
            self._cas(ns, jid, pool[jid][0], resets[jid], ("reset", jid))

    # -- scanning ------------------------------------------------------------

    def _on_scan(self, result: dict) -> None:
        self.scan_pending = False
        now = self.env.now
        cost_us = self.env.costs.record_us if hasattr(self.env, "costs") else 0.0
        changed_jobs = []
        n_records = 0
        for ns, (entries, cursor) in result.items():
            self.cursors[ns] = cursor
            n_records += len(entries)
            if ns == self.pool_ns:
                for key, ver, job in entries:
                    self._pool_update(key, ver, job, now)
                    if job is not None:
                        changed_jobs.append(job)
            elif ns == self.state_ns:
                for key, ver, hb in entries:
                    if key != self.id and hb is not None:
                        self._peer_update(key, hb, now)
            elif ns == self.child_pool_ns:
                for key, ver, job in entries:
                    if job is None:
                        self.child_pool.pop(key, None)
                    else:
                        self.child_pool[key] = (ver, job)
                if entries:
                    # delegated work moving on frees flow-control room
                    self.dirty = True
            elif ns == self.child_state_ns:
                for key, ver, hb in entries:
                    if hb is not None and key not in self.state.children:
                        self.state.children.add(key)
                        self.detector.add_peer(key, now, hb.time)
                    if hb is not None:
                        self.child_hb[key] = hb
                        if self.detector.heartbeat_seen(key, hb.time, now):
                            self._readmit(key)
                if entries:
                    self._refresh_agg()
        if cost_us:
            self.env.charge_us(cost_us * n_records)
        # decisions we recorded that never reached the store are forgotten after a grace period
        if self.engine.decided:
            for jid, (winner, pid, t) in list(self.engine.decided.items()):
                entry = self.pool.get(jid)
                if now - t > self.grace_ns and (entry is None or entry[1].state is JobState.PENDING):
                    self.engine.clear_decision(jid)
                    self.dirty = True
        dead = self._dead_set()
        if dead and changed_jobs:
            view = {j.id: j for j in changed_jobs if j.owner in dead}
            if view:
                self._issue_resets(reselect_jobs(view, dead, now), self.pool, self.pool_ns)
        if self.coordinator:
            if now - self.last_agg_refresh > self.config.agg_refresh_s * NS:
                self._refresh_agg(force=True)
            self._check_delegations()
        self._selection_round()

    def _pool_update(self, key: str, ver, job: Optional[Job], now: int) -> None:
        if job is None:
            self.pool.pop(key, None)
            self.engine.forget_job(key)
            return
        self.pool[key] = (ver, job)
        self.dirty = True
        if job.state is not JobState.PENDING:
            out = self.outgoing.get(key)
            if out is not None and not out.finalizing:
                rec = self.engine.records.get(out.proposal_id)
                if rec is not None:
                    self.engine._abort(rec, now, reason="taken")
            if job.state in TERMINAL_STATES:
                self.engine.decided.pop(key, None)

    def _peer_update(self, key: str, hb: Heartbeat, now: int) -> None:
        new = key not in self.state.peers
        if new:
            # a joiner announced itself in our group
            self.state.peers.add(key)
            self.detector.add_peer(key, now, hb.time)
            self._record("peer_joined", peer=key)
        readmit = self.detector.heartbeat_seen(key, hb.time, now)
        old = self.peer_hb.get(key)
        self.peer_hb[key] = hb
        if new or readmit:
            self.engine.set_members(self.members(), now)
            if readmit:
                self._record("readmit", peer=key)
        if old is None or old.version != hb.version:
            self.dirty = True

    def _refresh_agg(self, force: bool = False) -> None:
        self.last_agg_refresh = self.env.now
        live = self.detector.live_peers()
        kids = []
        for cid in sorted(self.state.children):
            hb = self.child_hb.get(cid)
            if hb is None:
                continue
            kids.append(AgentState(id=cid, level=hb.level, group_id=hb.group,
                                   capacity=hb.capacity, available=_vmin(hb.available, hb.capacity),
                                   connectivity=hb.connectivity, version=hb.version,
                                   live=cid in live))
        try:
            agg = aggregate_children(self.state, kids) if kids else None
        except EmptyGroup:
            agg = None
        if agg != self.agg:
            self.agg = agg
            self.agg_version += 1
            self._bump_view()
            self.publish_needed = True

    # -- selection -------------------------------------------------------------

    def _my_view(self) -> Optional[ResourceView]:
        if self.coordinator:
            agg = self.agg
            if agg is None:
                return None
            return ResourceView(self.id, agg.max_capacity, agg.dtn_union, self.agg_version,
                                agg, self.state.child_group)
        return ResourceView(self.id, self.effective_available(), self.state.connectivity,
                            self.view_version)

    def _peer_views(self) -> list:
        out = []
        for pid in sorted(self.live_peers()):
            hb = self.peer_hb.get(pid)
            if hb is None:
                continue
            if self.coordinator:
                if hb.agg is None:
                    continue
                out.append(ResourceView(pid, hb.available, hb.connectivity, hb.version,
                                        hb.agg, hb.child_group))
            else:
                out.append(ResourceView(pid, hb.available, hb.connectivity, hb.version))
        return out

    def _backlog(self) -> int:
        n = 0
        for jid in self.delegations:
            entry = self.child_pool.get(jid)
            if entry is None or entry[1] is None or entry[1].state is JobState.PENDING:
                n += 1
        return n

    def _selection_round(self) -> None:
        if not self.dirty:
            return
        self.dirty = False
        self.last_round = self.env.now
        engine = self.engine
        pending = [job for _, job in self.pool.values()
                   if job is not None and job.state is JobState.PENDING
                   and job.id not in self.outgoing and job.id not in engine.decided]
        if not pending:
            return
        pending.sort(key=lambda j: (j.submit_time or 0, j.id))
        window = pending[:self.config.selection_window]
        self._infeasible_verdicts(window)
        me = self._my_view()
        if me is None:
            return
        room = self.config.max_inflight - len(self.outgoing)
        if self.coordinator:
            limit = self.config.backlog_per_child * (self.agg.member_count if self.agg else 0)
            room = min(room, int(limit) - self._backlog() - len(self.outgoing))
        if room <= 0:
            return
        sel = self.selector
        evals0 = sel.evaluations
        hits0 = sel.cache.hits if sel.cache else 0
        peers = self._peer_views()
        cands = sel.candidates(me, peers, window, self.env.now, batch=len(window))
        costs = self.env.costs if hasattr(self.env, "costs") else None
        if costs is not None:
            hits = (sel.cache.hits - hits0) if sel.cache else 0
            self.env.charge_us(costs.eval_miss_us * (sel.evaluations - evals0)
                               + costs.eval_hit_us * hits)
        if not cands:
            return
        remaining = me.available
        chosen = []
        batch = min(self.params.batch_size, room)
        for _, jid, c in cands:
            if len(chosen) >= batch:
                break
            if engine.blocks(jid, c):
                continue
            job = self.pool[jid][1]
            if not self.coordinator:
                if not fits(job.requirements, remaining):
                    continue
                remaining = remaining - job.requirements
            chosen.append((jid, c))
        if not chosen:
            return
        now = self.env.now
        records = engine.propose(chosen, now, batch)
        for rec in records:
            ver, job = self.pool[rec.job_id]
            self.outgoing[rec.job_id] = Outgoing(rec.proposal_id, job.transition(JobState.PROPOSED),
                                                 ver, now)
            if not self.coordinator:
                self.reserved = self.reserved + job.requirements
            self._record("propose", job=rec.job_id, level=self.level, group=self.state.group_id,
                         pid=rec.proposal_id, cost=rec.cost)
        if records and not self.coordinator:
            self._bump_view()
            self.dirty = False

    def _infeasible_verdicts(self, window: list) -> None:
        members = self.members()
        if min(members) != self.id:
            return
        strict = self.params.strict_connectivity
        if self.coordinator:
            groups = []
            if self.agg is not None:
                groups.append((self.state.child_group, self.agg))
            for pid in self.live_peers():
                hb = self.peer_hb.get(pid)
                if hb is not None and hb.agg is not None:
                    groups.append((hb.child_group, hb.agg))
            for job in window:
                ok = any(g not in job.exclusions and fits(job.requirements, agg.max_total)
                         and (not strict or all(agg.dtn_union.score(d) > 0
                                                for d in job.required_dtns))
                         for g, agg in groups)
                if not ok and len(groups) == len(members):
                    self._mark_infeasible(job)
            return
        caps = [(self.state.capacity, self.state.connectivity)]
        for pid in self.live_peers():
            hb = self.peer_hb.get(pid)
            if hb is not None:
                caps.append((hb.capacity, hb.connectivity))
        for job in window:
            ok = any(fits(job.requirements, cap)
                     and (not strict or all(conn.score(d) > 0 for d in job.required_dtns))
                     for cap, conn in caps)
            if not ok:
                self._mark_infeasible(job)

    def _mark_infeasible(self, job: Job) -> None:
        if ("infeasible", job.id) in self.pending_ops:
            return
        ver = self.pool[job.id][0]
        self._cas(self.pool_ns, job.id, ver, job.transition(JobState.INFEASIBLE),
                  ("infeasible", job.id))

