import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from agentsel.audit import commit_audit, infeasibility_audit, oks_per_epoch
from agentsel.metrics import (
    Collector, MetricRecord, SelectionEvent, describe, fmt_ns, leader_entropy, read_csv,
    selections_csv, summarize, to_csv,
)
from agentsel.simnet import SharedStore
from agentsel.types import JobState
from conftest import make_agent, make_job


@pytest.mark.parametrize("ns,text", [(None, ""), (0, "0.000000000"), (1, "0.000000001"),
                                     (1_500_000_000, "1.500000000"), (-2, "-0.000000002")])
def test_fmt_ns(ns, text):
    assert fmt_ns(ns) == text


@given(st.integers(-10**15, 10**15))
def test_fmt_ns_roundtrip(ns):
    s = fmt_ns(ns)
    whole, frac = s.lstrip("-").split(".")
    back = int(whole) * 10**9 + int(frac)
    assert (-back if s.startswith("-") else back) == ns


@pytest.mark.parametrize("winners,expected", [
    (["a"] * 5, 0.0),
    (["a", "b"], 1.0),
    (["a", "b", "c", "d"] * 3, 2.0),
    (["a", "a", "b", ""], -(2 / 3 * math.log2(2 / 3) + 1 / 3 * math.log2(1 / 3))),
])
def test_leader_entropy(winners, expected):
    assert leader_entropy(winners) == pytest.approx(expected, abs=1e-12)


def test_leader_entropy_needs_winners():
    with pytest.raises(ValueError):
        leader_entropy(["", ""])


@given(st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=200))
def test_entropy_bounds(winners):
    h = leader_entropy(winners)
    assert -1e-12 <= h <= math.log2(len(set(winners))) + 1e-12


def test_describe_matches_numpy():
    xs = [0.3, 0.1, 0.2, 0.9, 0.5]
    d = describe(xs)
    assert d["n"] == 5 and d["mean"] == pytest.approx(np.mean(xs))
    assert d["std"] == pytest.approx(np.std(xs, ddof=1))
    assert d["p95"] == pytest.approx(np.percentile(xs, 95))
    assert describe([])["mean"] is None


def committed(job, owner):
    j = job.transition(JobState.PROPOSED).transition(JobState.PREPARED)
    return j.transition(JobState.COMMITTED, owner=owner)


def test_collector_reads_lifecycle_from_store():
    c = Collector(top_group="L0-g000")
    store = SharedStore()
    store.listeners.append(c.store_write)
    ns = "pool/L0-g000"
    j = make_job("j1", submit_time=0)
    c.submitted("j1", 0)
    store.cas(ns, "j1", None, j)
    c("propose", 10, {"job": "j1", "level": 0})
    j2 = committed(j, "a")
    store.cas(ns, "j1", 1, j2)
    c("commit", 30, {"job": "j1", "level": 0, "group": "L0-g000", "agent": "a", "start": 10,
                     "end": 30})
    # owner dies: the job is reset, then recommitted elsewhere and finished
    j3 = j2.transition(JobState.PENDING, owner=None)
    store.cas(ns, "j1", 2, j3)
    c("propose", 40, {"job": "j1", "level": 0})
    j4 = committed(j3, "b")
    store.cas(ns, "j1", 3, j4)
    c("commit", 55, {"job": "j1", "level": 0, "group": "L0-g000", "agent": "b", "start": 40,
                     "end": 55})
    j5 = j4.transition(JobState.RUNNING).transition(JobState.COMPLETE)
    store.cas(ns, "j1", 4, j4.transition(JobState.RUNNING))
    store.cas(ns, "j1", 5, j5)
    assert c.violations == [] and c.terminal == 1
    (rec,) = c.records({"j1": 12})
    assert (rec.outcome, rec.winner, rec.winner_level, rec.reselections) == ("Complete", "b", 0, 1)
    assert (rec.sel_start_t, rec.sel_end_t, rec.messages) == (40, 55, 12)
    assert [e.winner for e in c.selections] == ["a", "b"]


def test_collector_flags_double_commit():
    c = Collector()
    c.submitted("j", 0)
    for agent in ("a", "b"):
        c("commit", 5, {"job": "j", "level": 0, "group": "g", "agent": agent, "start": 0, "end": 5})
    assert len(c.violations) == 1 and "held by a" in c.violations[0]


def test_collector_detection_latency():
    c = Collector()
    c("crash", 100, {"agent": "x"})
    c("detect", 112, {"agent": "y", "peer": "x", "path": "fast"})
    c("detect", 130, {"agent": "y", "peer": "z", "path": "fallback"})
    assert c.detections == [("y", "x", "fast", 12), ("y", "z", "fallback", None)]


def test_csv_and_summary():
    recs = [MetricRecord("j0", 0, 10, 30, "a", 0, "Complete", 0, 6),
            MetricRecord("j1", 5, 20, 60, "b", 0, "Complete", 1, 9),
            MetricRecord("j2", 6, outcome="Infeasible")]
    sels = [SelectionEvent("j0", 1, "L1-g000", "c1", 0, 5), SelectionEvent("j0", 0, "L0-g000", "a", 10, 30),
            SelectionEvent("j1", 0, "L0-g000", "b", 20, 60)]
    text = to_csv(recs)
    rows = read_csv(text)
    assert rows[0]["selection_s"] == "0.000000020" and rows[2]["winner"] == ""
    s = summarize(text, selections_csv(sels), agents_final=4)
    assert (s["jobs"], s["complete"], s["infeasible"], s["reselections"]) == (3, 2, 1, 1)
    assert s["completion_pct"] == pytest.approx(200 / 3)
    assert s["per_level"]["0"]["share"] == pytest.approx(2 / 3)
    assert s["participation"] == 0.5
    assert s["leader_entropy"] == 1.0


class Rec:
    def __init__(self, t, ns, key, outcome, state, actor="x"):
        from agentsel.simnet import CasResult
        self.time, self.namespace, self.key, self.actor = t, ns, key, actor
        self.outcome = CasResult(outcome)
        self.value_state = state


def test_commit_audit_epochs():
    log = [Rec(0, "p", "j", "Ok", "Pending"), Rec(1, "p", "j", "Ok", "Committed", "a"),
           Rec(2, "p", "j", "Conflict", "Committed", "b"), Rec(3, "p", "j", "Ok", "Pending"),
           Rec(4, "p", "j", "Ok", "Committed", "b")]
    assert commit_audit(log) == []
    assert oks_per_epoch(log) == {("p", "j"): [1, 1]}
    log.append(Rec(5, "p", "j", "Ok", "Committed", "c"))
    assert len(commit_audit(log)) == 1
    assert oks_per_epoch(log)[("p", "j")] == [1, 2]


def test_infeasibility_audit():
    recs = [MetricRecord("big", 0, outcome="Infeasible"), MetricRecord("small", 0),
            MetricRecord("done", 0, outcome="Complete")]
    jobs = {"big": make_job("big", cpu=64), "small": make_job("small"), "done": make_job("done")}
    assert infeasibility_audit(recs, jobs, [make_agent()]) == ["small"]
