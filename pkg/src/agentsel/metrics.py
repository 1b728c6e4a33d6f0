"""Per-job metric records, CSV export and run summaries."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

NS = 1_000_000_000

CSV_COLUMNS = ["job_id", "submit_t", "sel_start_t", "sel_end_t", "wait_s", "selection_s",
               "sched_latency_s", "winner", "winner_level", "outcome", "reselections", "messages"]
SELECTION_COLUMNS = ["job_id", "level", "group", "winner", "start_t", "end_t", "selection_s"]


def fmt_ns(ns: Optional[int]) -> str:
    """Exact seconds with 9 decimals from an integer nanosecond count."""
    if ns is None:
        return ""
    sign = "-" if ns < 0 else ""
    ns = abs(ns)
    return f"{sign}{ns // NS}.{ns % NS:09d}"


@dataclass
class MetricRecord:
    job_id: str
    submit_t: int
    sel_start_t: Optional[int] = None
    sel_end_t: Optional[int] = None
    winner: str = ""
    winner_level: Optional[int] = None
    outcome: str = "Unfinished"
    reselections: int = 0
    messages: int = 0

    @property
    def wait(self) -> Optional[int]:
        return None if self.sel_start_t is None else self.sel_start_t - self.submit_t

    @property
    def selection(self) -> Optional[int]:
        if self.sel_start_t is None or self.sel_end_t is None:
            return None
        return self.sel_end_t - self.sel_start_t

    @property
    def sched_latency(self) -> Optional[int]:
        return None if self.sel_end_t is None else self.sel_end_t - self.submit_t

    def row(self) -> list:
        return [self.job_id, fmt_ns(self.submit_t), fmt_ns(self.sel_start_t), fmt_ns(self.sel_end_t),
                fmt_ns(self.wait), fmt_ns(self.selection), fmt_ns(self.sched_latency), self.winner,
                "" if self.winner_level is None else str(self.winner_level), self.outcome,
                str(self.reselections), str(self.messages)]


@dataclass(frozen=True)
class SelectionEvent:
    job_id: str
    level: int
    group: str
    winner: str
    start: int
    end: int

    def row(self) -> list:
        return [self.job_id, str(self.level), self.group, self.winner, fmt_ns(self.start),
                fmt_ns(self.end), fmt_ns(self.end - self.start)]


@dataclass
class _Track:
    submit: int
    open_start: dict = field(default_factory=dict)
    final: Optional[SelectionEvent] = None
    winner: str = ""
    winner_level: Optional[int] = None
    outcome: str = "Unfinished"
    reselections: int = 0


class Collector:
    """Observer of agent/simulator events; keeps per-job tracks and safety checks."""

    def __init__(self, clock=None, leaf_level: int = 0, top_group: str = ""):
        self.clock = clock
        self.leaf_level = leaf_level
        self.top_group = top_group
        self.jobs: dict = {}
        self.selections: list = []
        self.terminal = 0
        self.violations: list = []
        self.owner: dict = {}  # (group, job) -> committing agent in the current epoch
        self.crash_times: dict = {}
        self.detections: list = []  # (observer, peer, path, latency ns or None)
        self.counts: Counter = Counter()

    def submitted(self, job_id: str, t: int) -> None:
        self.jobs[job_id] = _Track(t)

    def _progress(self) -> None:
        if self.clock is not None:
            self.clock.progress()

    def __call__(self, kind: str, now: int, f: dict) -> None:
        self.counts[kind] += 1
        if kind == "propose":
            tr = self.jobs.get(f["job"])
            if tr is not None:
                tr.open_start.setdefault(f["level"], now)
        elif kind == "commit":
            job, level, group = f["job"], f["level"], f["group"]
            key = (group, job)
            prev = self.owner.get(key)
            if prev is not None:
                self.violations.append(
                    f"job {job} committed in {group} by {f['agent']} while held by {prev}")
            self.owner[key] = f["agent"]
            tr = self.jobs.get(job)
            if tr is not None:
                start = tr.open_start.pop(level, f["start"])
                ev = SelectionEvent(job, level, group, f["agent"], start, f["end"])
                self.selections.append(ev)
                if level == self.leaf_level:
                    tr.final = ev
            self._progress()
        elif kind == "crash":
            self.crash_times[f["agent"]] = now
            self._progress()
        elif kind == "detect":
            crashed = self.crash_times.get(f["peer"])
            lat = None if crashed is None else now - crashed
            self.detections.append((f["agent"], f["peer"], f["path"], lat))
        elif kind == "join":
            self._progress()

    def store_write(self, ns: str, key: str, before, after) -> None:
        """Store listener for job lifecycle changes.

        Resets, completions and top-level infeasibility are taken from the store
        rather than from agent acknowledgements, so they count even when the
        writer dies before its reply arrives.
        """
        if not ns.startswith("pool/") or after is None:
            return
        group = ns[len("pool/"):]
        level = int(group[1:group.index("-")])
        old = None if before is None else before.state.value
        new = after.state.value
        tr = self.jobs.get(key)
        if new == "Pending" and old not in (None, "Pending"):
            self.owner.pop((group, key), None)
            if tr is not None:
                tr.reselections += 1
                tr.open_start.pop(level, None)
        elif new == "Complete" and tr is not None and tr.outcome == "Unfinished":
            tr.outcome = "Complete"
            tr.winner = after.owner or ""
            tr.winner_level = level
            self.terminal += 1
        elif new == "Infeasible" and group == self.top_group and tr is not None \
                and tr.outcome == "Unfinished":
            tr.outcome = "Infeasible"
            self.terminal += 1
        else:
            return
        self._progress()

    def records(self, msgs_by_job: dict) -> list:
        out = []
        for jid in sorted(self.jobs):
            tr = self.jobs[jid]
            r = MetricRecord(jid, tr.submit, outcome=tr.outcome, reselections=tr.reselections,
                             messages=msgs_by_job.get(jid, 0))
            if tr.final is not None:
                r.sel_start_t = tr.final.start
                r.sel_end_t = tr.final.end
            if tr.outcome == "Complete":
                r.winner = tr.winner
                r.winner_level = tr.winner_level
            out.append(r)
        return out


def to_csv(records: Iterable[MetricRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def selections_csv(events: Iterable[SelectionEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SELECTION_COLUMNS)
    for e in sorted(events, key=lambda e: (e.end, e.job_id, e.level)):
        w.writerow(e.row())
    return buf.getvalue()


def read_csv(text: str) -> list:
    return list(csv.DictReader(io.StringIO(text)))


def leader_entropy(winners: Iterable[str]) -> float:
    counts = Counter(w for w in winners if w)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no completed jobs")
    h = 0.0
    for c in sorted(counts.values()):
        p = c / total
        h -= p * math.log2(p)
    return h


def describe(values: list) -> dict:
    if not values:
        return {"n": 0, "mean": None, "std": None, "median": None, "p95": None, "p99": None,
                "max": None}
    a = np.asarray(values, dtype=float)
    return {
        "n": len(values),
        "mean": round(float(a.mean()), 9),
        "std": round(float(a.std(ddof=1)) if len(a) > 1 else 0.0, 9),
        "median": round(float(np.percentile(a, 50)), 9),
        "p95": round(float(np.percentile(a, 95)), 9),
        "p99": round(float(np.percentile(a, 99)), 9),
        "max": round(float(a.max()), 9),
    }


def _f(s: str) -> Optional[float]:
    return float(s) if s != "" else None


def summarize(metrics_text: str, selections_text: str, agents_final: Optional[int] = None) -> dict:
    """Run summary computed only from the two CSV documents."""
    rows = read_csv(metrics_text)
    sels = read_csv(selections_text)
    n = len(rows)
    outcomes = Counter(r["outcome"] for r in rows)
    done = [r for r in rows if r["outcome"] == "Complete"]
    summary = {
        "jobs": n,
        "complete": outcomes.get("Complete", 0),
        "infeasible": outcomes.get("Infeasible", 0),
        "unfinished": outcomes.get("Unfinished", 0),
        "completion_pct": round(100.0 * outcomes.get("Complete", 0) / n, 9) if n else 0.0,
        "selection_s": describe([float(s["selection_s"]) for s in sels]),
        "job_selection_s": describe([v for v in (_f(r["selection_s"]) for r in done) if v is not None]),
        "wait_s": describe([v for v in (_f(r["wait_s"]) for r in done) if v is not None]),
        "sched_latency_s": describe([v for v in (_f(r["sched_latency_s"]) for r in done)
                                     if v is not None]),
        "reselections": sum(int(r["reselections"]) for r in rows),
        "messages_attributed": sum(int(r["messages"]) for r in rows),
    }
    levels = Counter(int(s["level"]) for s in sels)
    total = sum(levels.values())
    summary["per_level"] = {
        str(lv): {"selections": c, "share": round(c / total, 9),
                  "selection_s": describe([float(s["selection_s"]) for s in sels
                                           if int(s["level"]) == lv])}
        for lv, c in sorted(levels.items())}
    winners = [r["winner"] for r in done]
    summary["leader_entropy"] = round(leader_entropy(winners), 9) if winners else None
    if agents_final:
        summary["agents_final"] = agents_final
        summary["participation"] = round(len(set(winners)) / agents_final, 9)
    return summary
