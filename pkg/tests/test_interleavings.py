"""Exhaustive and randomized delivery orders for small consensus groups.

Each engine's finalize event is turned into a compare-and-set on a single
register, as the agents do against the shared store. Safety: exactly one
successful install per job. Liveness without timeouts: every complete
delivery finalizes at least one proposal.
"""

import copy
import random

import pytest
from hypothesis import given, settings, strategies as st

from agentsel.consensus import ACTIVE, ConsensusEngine, quorum


class Register:
    """One store key: the first install wins, later ones conflict."""

    def __init__(self):
        self.owner = None
        self.oks = 0
        self.conflicts = 0

    def cas(self, who):
        if self.owner is None:
            self.owner = who
            self.oks += 1
        else:
            self.conflicts += 1


class World:
    def __init__(self, members, costs, up=None):
        self.members = list(members)
        self.engines = {i: ConsensusEngine(i, members, phase_timeout_ns=10**15) for i in members}
        self.pending = []
        self.finalized = frozenset()
        self.store = Register()
        self.up = set(members) if up is None else set(up)
        for i, c in sorted(costs.items()):
            self.engines[i].propose([("j", c)], 0)
        self.flush()

    def flush(self):
        for i, e in self.engines.items():
            out, ev = e.drain()
            if i not in self.up:
                continue
            for m in out:
                self.pending += [(d, m) for d in self.members if d != i and d in self.up]
            for kind, rec, _ in ev:
                if kind == "finalize":
                    self.finalized |= {(i, rec.proposal_id)}
                    self.store.cas(rec.proposal_id)
        # a vote for a record the receiver already closed changes nothing
        self.pending = [(d, m) for d, m in self.pending if not self._noop(d, m)]

    def _noop(self, d, m):
        r = self.engines[d].records.get(m.proposal_id)
        return r is not None and r.seen and r.phase not in ACTIVE

    def deliver(self, idx):
        d, m = self.pending.pop(idx)
        self.engines[d].dispatch(m, 0)
        self.flush()

    def key(self):
        engines = []
        for i in self.members:
            e = self.engines[i]
            recs = []
            for pid, r in sorted(e.records.items()):
                if r.seen and r.phase not in ACTIVE:
                    recs.append((pid, r.phase.value))
                else:
                    recs.append((pid, r.phase.value, frozenset(r.prepare_votes),
                                 frozenset(r.commit_votes), r.seen, r.endorsed, r.commit_sent))
            engines.append((tuple(recs), tuple(sorted((j, d[1]) for j, d in e.decided.items()))))
        msgs = tuple(sorted((d, m.kind.value, m.proposal_id, m.sender) for d, m in self.pending))
        return tuple(engines), msgs, self.finalized, self.store.owner

    def check_terminal(self):
        assert self.finalized, "complete delivery without any finalized proposal"
        assert self.store.oks == 1
        winner = self.store.owner
        rec = self.engines[winner[0]].records[winner]
        assert len(rec.commit_votes & set(self.members)) >= quorum(rec.n_live_at_start)


def explore(members, costs):
    seen = set()
    stack = [World(members, costs)]
    terminals = 0
    while stack:
        w = stack.pop()
        k = w.key()
        if k in seen:
            continue
        seen.add(k)
        assert w.store.oks <= 1
        if not w.pending:
            w.check_terminal()
            terminals += 1
            continue
        tried = set()
        for idx, item in enumerate(w.pending):
            if item in tried:
                continue
            tried.add(item)
            nxt = copy.deepcopy(w)
            nxt.deliver(idx)
            stack.append(nxt)
    return len(seen), terminals


@pytest.mark.parametrize("members,costs", [
    (["a", "b"], {"a": 0.3}),
    (["a", "b"], {"a": 0.3, "b": 0.5}),
    (["a", "b"], {"a": 0.4, "b": 0.4}),
    (["a", "b", "c"], {"a": 0.3}),
    (["a", "b", "c"], {"c": 0.3}),
])
def test_exhaustive_small(members, costs):
    states, terminals = explore(members, costs)
    assert terminals >= 1


@pytest.mark.slow
def test_exhaustive_two_proposers_of_three():
    states, terminals = explore(["a", "b", "c"], {"a": 0.5, "b": 0.3})
    assert states > 1000 and terminals >= 1


def run_random(members, costs, crashed, seed, crash_after):
    """One random delivery order; ``crashed`` agents fall silent after ``crash_after`` steps."""
    rng = random.Random(seed)
    w = World(members, costs)
    steps = 0
    while w.pending:
        if steps == crash_after:
            w.up -= set(crashed)
            w.pending = [(d, m) for d, m in w.pending if d in w.up]
            live = sorted(w.up)
            for i in live:
                w.engines[i].set_members(live, 0)
            w.flush()
            if not w.pending:
                break
        w.deliver(rng.randrange(len(w.pending)))
        steps += 1
    return w


@settings(max_examples=300, deadline=None)
@given(st.integers(3, 6), st.lists(st.floats(0.0, 1.0), min_size=1, max_size=4),
       st.integers(0, 2**32), st.integers(0, 2), st.integers(0, 40))
def test_random_orders_single_install(n, costs, seed, n_crash, crash_after):
    members = [f"m{i}" for i in range(n)]
    proposers = dict(zip(members, costs))
    n_crash = min(n_crash, (n - 1) // 2)
    # crash non-proposers only, so a proposer is always left to finish
    crashed = [m for m in reversed(members) if m not in proposers][:n_crash]
    w = run_random(members, proposers, crashed, seed, crash_after)
    # a live majority remains and lowers its quorum, so one install always happens
    assert w.store.oks == 1
