"""Three-phase proposal/prepare/commit agreement within one consensus group.

``ConsensusEngine`` is a pure state machine: callers feed it messages and
clock readings, it returns actions, appends outgoing broadcasts to
``outbox`` and reports lifecycle events (aborts, finalizations, decisions)
on ``events``. It never touches the network or the store itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .types import ConsensusMessage, MessageKind, proposal_better

log = logging.getLogger(__name__)

DEFAULT_PHASE_TIMEOUT_S = 10.0
DEFAULT_BUFFER_WINDOW_S = 2.0


def quorum(n_live: int) -> int:
    """ceil((n_live + 1) / 2) in integer arithmetic."""
    if n_live < 1:
        raise ValueError("a group always contains at least the local agent")
    return (n_live + 2) // 2


@dataclass(frozen=True)
class QuorumView:
    n_live: int
    q: int

    @classmethod
    def of(cls, n_live: int) -> QuorumView:
        return cls(n_live, quorum(n_live))


def current_quorum(live_members: Iterable[str]) -> QuorumView:
    return QuorumView.of(len(set(live_members)))


class Phase(str, Enum):
    PROPOSING = "Proposing"
    PREPARING = "Preparing"
    COMMITTING = "Committing"
    DONE = "Done"
    ABORTED = "Aborted"


ACTIVE = frozenset({Phase.PROPOSING, Phase.PREPARING, Phase.COMMITTING})


class Direction(str, Enum):
    OUTGOING = "Outgoing"
    INCOMING = "Incoming"


class Action(str, Enum):
    SEND_PREPARE = "SendPrepare"
    REJECT = "Reject"
    SEND_COMMIT = "SendCommit"
    ACCUMULATE = "Accumulate"
    FINALIZE = "Finalize"
    IGNORE = "Ignore"


@dataclass
class ProposalRecord:
    proposal_id: tuple
    job_id: str
    proposer: str
    cost: float
    direction: Direction
    phase: Phase
    started_at: int
    n_live_at_start: int
    prepare_votes: set = field(default_factory=set)
    commit_votes: set = field(default_factory=set)
    phase_since: int = 0
    # False while only buffered votes are known and the PROPOSAL itself has not arrived
    seen: bool = True
    endorsed: bool = False
    commit_sent: bool = False

    def better_than(self, other: ProposalRecord) -> bool:
        return proposal_better(self.cost, self.proposer, other.cost, other.proposer)


class ConsensusEngine:
    def __init__(self, self_id: str, members: Iterable[str], *, group: str = "",
                 phase_timeout_ns: int = int(DEFAULT_PHASE_TIMEOUT_S * 1e9),
                 buffer_window_ns: int = int(DEFAULT_BUFFER_WINDOW_S * 1e9)):
        self.id = self_id
        self.members = set(members) | {self_id}
        self.group = group
        self.phase_timeout_ns = phase_timeout_ns
        self.buffer_window_ns = buffer_window_ns
        self.records: dict = {}
        self.by_job: dict = {}
        self.decided: dict = {}  # job_id -> (winner, proposal_id, time)
        self.outbox: list = []
        self.events: list = []
        self._counter = 0
        self.stale = 0
        self.foreign = 0
        self.timeouts = 0
        self.early_aborts = 0

    # -- quorum --------------------------------------------------------

    def quorum_view(self) -> QuorumView:
        return QuorumView.of(len(self.members))

    def q_for(self, rec: ProposalRecord) -> int:
        # joins never raise the bar for an in-flight proposal; failures lower it at once
        return quorum(min(rec.n_live_at_start, len(self.members)))

    def _count(self, votes: set) -> int:
        return len(votes & self.members)

    def set_members(self, members: Iterable[str], now: int = 0) -> None:
        new = set(members) | {self.id}
        gone = self.members - new
        self.members = new
        for pid, rec in list(self.records.items()):
            if rec.phase not in ACTIVE and rec.seen:
                continue
            if rec.proposer in gone:
                self._abort(rec, now, reason="proposer-left")
            elif rec.seen:
                self._advance(rec, now)

    # -- bookkeeping -----------------------------------------------------

    def _new_pid(self) -> tuple:
        self._counter += 1
        return (self.id, self._counter)

    def _index(self, rec: ProposalRecord) -> None:
        self.records[rec.proposal_id] = rec
        self.by_job.setdefault(rec.job_id, set()).add(rec.proposal_id)

    def _emit(self, kind: MessageKind, rec: ProposalRecord) -> None:
        self.outbox.append(ConsensusMessage(kind, rec.proposal_id, rec.job_id, rec.proposer,
                                            self.id, rec.cost, self.group))

    def _set_phase(self, rec: ProposalRecord, phase: Phase, now: int) -> None:
        rec.phase = phase
        rec.phase_since = now

    def _abort(self, rec: ProposalRecord, now: int, reason: str) -> None:
        if rec.phase not in ACTIVE and rec.seen:
            return
        rec.seen = True
        self._set_phase(rec, Phase.ABORTED, now)
        if rec.direction is Direction.OUTGOING:
            self.events.append(("aborted", rec, reason))

    def active_for_job(self, job_id: str) -> list:
        out = []
        for pid in self.by_job.get(job_id, ()):
            rec = self.records[pid]
            if rec.seen and rec.phase in ACTIVE:
                out.append(rec)
        return out

    def own_active(self, job_id: str) -> Optional[ProposalRecord]:
        for rec in self.active_for_job(job_id):
            if rec.direction is Direction.OUTGOING:
                return rec
        return None

    def blocks(self, job_id: str, cost: float) -> bool:
        """True if a known active proposal for the job is at least as good as ours would be."""
        if job_id in self.decided:
            return True
        for rec in self.active_for_job(job_id):
            if rec.direction is Direction.OUTGOING:
                return True
            if not proposal_better(cost, self.id, rec.cost, rec.proposer):
                return True
        return False

    def clear_decision(self, job_id: str) -> None:
        self.decided.pop(job_id, None)

    def forget_job(self, job_id: str) -> None:
        for pid in self.by_job.pop(job_id, ()):
            self.records.pop(pid, None)
        self.decided.pop(job_id, None)

    # -- phases ----------------------------------------------------------

    def propose(self, candidates: Iterable[tuple], now: int, batch: int = 8) -> list:
        """Open one outgoing proposal per (job_id, cost), at most ``batch`` of them."""
        out = []
        n_live = len(self.members)
        for job_id, cost_ in candidates:
            if len(out) >= batch:
                break
            if self.own_active(job_id) is not None:
                continue
            rec = ProposalRecord(self._new_pid(), job_id, self.id, cost_, Direction.OUTGOING,
                                 Phase.PROPOSING, now, n_live, {self.id}, set(), now,
                                 endorsed=True)
            self._index(rec)
            self._emit(MessageKind.PROPOSAL, rec)
            out.append(rec)
            self._advance(rec, now)
        return out

    def on_proposal(self, msg: ConsensusMessage, now: int, job_open: bool = True) -> Action:
        if msg.proposer not in self.members or msg.sender not in self.members:
            self.foreign += 1
            return Action.IGNORE
        rec = self.records.get(msg.proposal_id)
        if rec is not None and rec.seen:
            if rec.phase not in ACTIVE:
                self.stale += 1
            return Action.IGNORE
        if rec is None:
            rec = ProposalRecord(msg.proposal_id, msg.job_id, msg.proposer, msg.cost,
                                 Direction.INCOMING, Phase.PROPOSING, now, len(self.members),
                                 phase_since=now)
            self._index(rec)
        else:
            # votes were buffered ahead of the proposal
            rec.job_id, rec.cost, rec.seen = msg.job_id, msg.cost, True
            rec.started_at = rec.phase_since = now
            rec.n_live_at_start = len(self.members)
        rec.prepare_votes.add(msg.proposer)

        if not job_open or self._settled(rec):
            self._set_phase(rec, Phase.ABORTED, now)
            return Action.REJECT
        if self._rival(rec) is not None:
            # stays tracked (others may still decide it) but without our endorsement
            self._set_phase(rec, Phase.PREPARING, now)
            self._advance(rec, now)
            return Action.REJECT

        own = self.own_active(msg.job_id)
        if own is not None and own is not rec and not own.commit_sent:
            # ours loses to the incoming one: withdraw without waiting for a timeout
            self.early_aborts += 1
            self._abort(own, now, reason="early-abort")
        rec.endorsed = True
        rec.prepare_votes.add(self.id)
        self._set_phase(rec, Phase.PREPARING, now)
        self._emit(MessageKind.PREPARE, rec)
        self._advance(rec, now)
        return Action.SEND_PREPARE

    def _settled(self, rec: ProposalRecord) -> bool:
        """A decision exists for the job that ``rec`` does not improve on.

        A strictly better late proposal is still endorsed: the decided one's
        proposer may have withdrawn it, and the store arbitrates between both.
        """
        d = self.decided.get(rec.job_id)
        if d is None:
            return False
        won = self.records.get(d[1])
        return won is None or not rec.better_than(won)

    def _rival(self, rec: ProposalRecord) -> Optional[ProposalRecord]:
        """Best known active proposal for the same job that beats ``rec``."""
        rival = None
        for other in self.active_for_job(rec.job_id):
            if other is not rec and other.better_than(rec) and (
                    rival is None or other.better_than(rival)):
                rival = other
        return rival

    def _vote(self, msg: ConsensusMessage, now: int, commit: bool) -> Optional[ProposalRecord]:
        if msg.sender not in self.members:
            self.foreign += 1
            return None
        rec = self.records.get(msg.proposal_id)
        if rec is None:
            rec = ProposalRecord(msg.proposal_id, msg.job_id, msg.proposer, msg.cost,
                                 Direction.INCOMING, Phase.PROPOSING, now, len(self.members),
                                 phase_since=now, seen=False)
            self._index(rec)
        elif rec.seen and rec.phase not in ACTIVE:
            self.stale += 1
            return None
        (rec.commit_votes if commit else rec.prepare_votes).add(msg.sender)
        return rec

    def on_prepare(self, msg: ConsensusMessage, now: int) -> Action:
        rec = self._vote(msg, now, commit=False)
        if rec is None:
            return Action.IGNORE
        if not rec.seen:
            return Action.ACCUMULATE
        sent = rec.commit_sent
        self._advance(rec, now)
        return Action.SEND_COMMIT if rec.commit_sent and not sent else Action.ACCUMULATE

    def on_commit(self, msg: ConsensusMessage, now: int) -> Action:
        rec = self._vote(msg, now, commit=True)
        if rec is None:
            return Action.IGNORE
        if not rec.seen:
            return Action.ACCUMULATE
        self._advance(rec, now)
        return Action.FINALIZE if rec.phase is Phase.DONE else Action.ACCUMULATE

    def _advance(self, rec: ProposalRecord, now: int) -> None:
        if not rec.seen or rec.phase not in ACTIVE:
            return
        q = self.q_for(rec)
        if rec.phase is Phase.PROPOSING and self._count(rec.prepare_votes) > 1:
            self._set_phase(rec, Phase.PREPARING, now)
        if (not rec.commit_sent and rec.endorsed
                and self._count(rec.prepare_votes) >= q and self._rival(rec) is None):
            rec.commit_sent = True
            rec.commit_votes.add(self.id)
            self._set_phase(rec, Phase.COMMITTING, now)
            self._emit(MessageKind.COMMIT, rec)
            if rec.direction is Direction.OUTGOING:
                self.events.append(("prepared", rec, None))
        if self._count(rec.commit_votes) >= q:
            self._set_phase(rec, Phase.DONE, now)
            if rec.direction is Direction.OUTGOING:
                self.events.append(("finalize", rec, None))
            else:
                self.decided[rec.job_id] = (rec.proposer, rec.proposal_id, now)
                self.events.append(("decided", rec, None))
                own = self.own_active(rec.job_id)
                # a better own proposal stays: the decided one's proposer may have withdrawn
                if own is not None and not own.commit_sent and not own.better_than(rec):
                    self._abort(own, now, reason="decided-elsewhere")

    def expire(self, now: int) -> list:
        """Abort proposals stuck in one phase too long; drop stale buffered votes."""
        aborted = []
        for pid, rec in list(self.records.items()):
            if not rec.seen:
                if now - rec.phase_since > self.buffer_window_ns:
                    self._drop(pid, rec)
                continue
            if rec.phase in ACTIVE:
                if now - rec.phase_since > self.phase_timeout_ns:
                    self.timeouts += 1
                    self._abort(rec, now, reason="timeout")
                    aborted.append(rec)
            elif now - rec.phase_since > 3 * self.phase_timeout_ns:
                # keep finished records long enough to recognise stragglers
                self._drop(pid, rec)
        return aborted

    def _drop(self, pid: tuple, rec: ProposalRecord) -> None:
        del self.records[pid]
        pids = self.by_job.get(rec.job_id)
        if pids is not None:
            pids.discard(pid)
            if not pids:
                del self.by_job[rec.job_id]

    def drain(self) -> tuple:
        """Hand over and clear pending broadcasts and lifecycle events."""
        out, ev = self.outbox, self.events
        self.outbox, self.events = [], []
        return out, ev

    def dispatch(self, msg: ConsensusMessage, now: int, job_open: bool = True) -> Action:
        if msg.kind is MessageKind.PROPOSAL:
            return self.on_proposal(msg, now, job_open)
        if msg.kind is MessageKind.PREPARE:
            return self.on_prepare(msg, now)
        return self.on_commit(msg, now)
