"""Cross-run analysis: topology comparison, failure reports and significance tests."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy import stats as sps

from .metrics import describe, read_csv
from .runner import RunResult, infeasible_against_survivors, run_scenario
from .scenario import Scenario
from .topology import TopologyKind

log = logging.getLogger(__name__)

NS = 1_000_000_000

# expected order of mean selection time, fastest first
TREND = (TopologyKind.HIERARCHICAL, TopologyKind.MESH, TopologyKind.RING)


# -- topology comparison ------------------------------------------------------

@dataclass
class ComparisonRow:
    scenario: str
    kind: TopologyKind
    agents: int
    jobs: int
    selection_means: list  # per repetition, seconds
    messages_per_job: list  # per repetition

    @property
    def mean(self) -> float:
        return float(np.mean(self.selection_means))

    @property
    def std(self) -> float:
        return float(np.std(self.selection_means, ddof=1)) if len(self.selection_means) > 1 else 0.0

    def line(self) -> str:
        msgs = float(np.mean(self.messages_per_job))
        return (f"{self.scenario:<24} {self.kind.value:<12} {self.agents:>5} {self.jobs:>6} "
                f"{self.mean * 1e3:>10.3f} ± {self.std * 1e3:<8.3f} {msgs:>10.1f}")


@dataclass
class Comparison:
    rows: list
    violations: list = field(default_factory=list)

    def table(self) -> str:
        head = (f"{'scenario':<24} {'topology':<12} {'agents':>5} {'jobs':>6} "
                f"{'selection ms (mean ± std)':>21} {'msgs/job':>10}")
        lines = [head] + [r.line() for r in self.rows]
        lines += [f"TREND VIOLATION: {v}" for v in self.violations]
        return "\n".join(lines)


def trend_violations(rows: list) -> list:
    """Pairs at equal scale whose mean selection time breaks hier <= mesh <= ring."""
    out = []
    rank = {k: i for i, k in enumerate(TREND)}
    for i, a in enumerate(rows):
        for b in rows[i + 1:]:
            if (a.agents, a.jobs) != (b.agents, b.jobs) or a.kind == b.kind:
                continue
            lo, hi = (a, b) if rank[a.kind] < rank[b.kind] else (b, a)
            if lo.mean > hi.mean:
                out.append(f"{lo.scenario} ({lo.mean * 1e3:.3f} ms) slower than "
                           f"{hi.scenario} ({hi.mean * 1e3:.3f} ms)")
    return out


def compare_topologies(scenarios: Iterable[Scenario], reps: int,
                       out_dir=None) -> Comparison:
    rows = []
    for sc in scenarios:
        sel, msgs = [], []
        for rep in range(reps):
            r = run_scenario(sc, rep, out_dir)
            sel.append(r.summary["selection_s"]["mean"] or 0.0)
            msgs.append(r.summary["messages_per_job"])
        rows.append(ComparisonRow(sc.name, sc.topology.kind, sc.topology.total_agents,
                                  sc.workload.job_count, sel, msgs))
    return Comparison(rows, trend_violations(rows) if len(rows) > 1 else [])


# -- failure report -----------------------------------------------------------

def commit_times(result: RunResult) -> list:
    """Leaf-level assignment times in ns, sorted."""
    return sorted(e.end for e in result.selections if e.level == 0)


def recovery_time(commits: list, crash_ns: int, horizon_ns: int, window_s: float = 30.0,
                  tolerance: float = 0.10, step_s: float = 0.1) -> Optional[float]:
    """Seconds from the crash until the commit rate is back within tolerance of baseline.

    The baseline is the rate over the window before the crash. The window is
    shortened to the pre-crash span when the crash comes earlier than that.
    Returns None when no post-crash window within the horizon qualifies.
    """
    win = min(int(window_s * NS), crash_ns)
    if win <= 0:
        return None
    arr = np.asarray(commits, dtype=np.int64)

    def rate(a: int, b: int) -> float:
        return float(np.searchsorted(arr, b) - np.searchsorted(arr, a)) / ((b - a) / NS)

    base = rate(crash_ns - win, crash_ns)
    if base <= 0:
        return None
    t = crash_ns
    step = int(step_s * NS)
    while t + win <= horizon_ns:
        if abs(rate(t, t + win) - base) <= tolerance * base:
            return (t - crash_ns) / NS
        t += step
    return None


@dataclass
class FailureReport:
    scenario: str
    completion_pct: list
    detection: dict  # path -> describe() of latencies in seconds
    reselections: list
    recovery_s: list
    incomplete_feasible: list  # per repetition: incomplete jobs a survivor could hold
    violations: list

    def ratio(self) -> Optional[float]:
        fast = self.detection.get("fast", {}).get("mean")
        slow = self.detection.get("fallback", {}).get("mean")
        if not fast or not slow:
            return None
        return slow / fast

    def text(self) -> str:
        lines = [f"scenario {self.scenario}",
                 f"completion %: {np.mean(self.completion_pct):.2f} ± "
                 f"{np.std(self.completion_pct, ddof=1) if len(self.completion_pct) > 1 else 0.0:.2f}"]
        for path, d in sorted(self.detection.items()):
            if d["n"]:
                lines.append(f"detection {path}: n={d['n']} mean={d['mean'] * 1e3:.3f} ms "
                             f"p95={d['p95'] * 1e3:.3f} ms")
            else:
                lines.append(f"detection {path}: none")
        ratio = self.ratio()
        if ratio is not None:
            lines.append(f"fallback/fast latency ratio: {ratio:.1f}")
        lines.append(f"reselections per run: {self.reselections}")
        lines.append("recovery s: " + ", ".join("n/a" if r is None else f"{r:.2f}"
                                              for r in self.recovery_s))
        lines.append(f"incomplete jobs feasible on survivors: "
                     f"{sum(len(x) for x in self.incomplete_feasible)}")
        lines += [f"VIOLATION: {v}" for v in self.violations]
        return "\n".join(lines)


def _latencies(result: RunResult, path: str) -> list:
    return [lat / NS for _, _, p, lat in result.detections if p == path and lat is not None]


def failure_report(sc: Scenario, reps: int = 1, fallback: bool = True, window_s: float = 30.0,
                   out_dir=None, fallback_reps: Optional[int] = None) -> FailureReport:
    """Resilience summary for a scenario with crashes.

    With ``fallback`` set, each repetition (or only the first ``fallback_reps``)
    is also run with the channel fast path switched off so that the
    heartbeat-timeout path gets measured.
    """
    if not sc.schedule.crashes:
        raise ValueError(f"{sc.name}: failure report needs a crash schedule")
    comp, resel, recov, feas, viol = [], [], [], [], []
    lat = {"fast": [], "fallback": []}
    first_crash = min(c.at for c in sc.schedule.crashes)
    for rep in range(reps):
        r = run_scenario(sc, rep, out_dir)
        comp.append(r.summary["completion_pct"])
        resel.append(r.summary["reselections"])
        lat["fast"] += _latencies(r, "fast")
        lat["fallback"] += _latencies(r, "fallback")
        last_submit = max(j.submit_time for j in r.jobs.values())
        recov.append(recovery_time(commit_times(r), int(first_crash * NS), last_submit, window_s))
        feas.append(infeasible_against_survivors(r))
        viol += [f"rep {rep}: {v}" for v in r.violations]
        if fallback and (fallback_reps is None or rep < fallback_reps):
            slow = copy.deepcopy(sc)
            slow.detector.fast_path = False
            rs = run_scenario(slow, rep)
            lat["fallback"] += _latencies(rs, "fallback")
            viol += [f"rep {rep} (no fast path): {v}" for v in rs.violations]
    return FailureReport(sc.name, comp, {k: describe(v) for k, v in lat.items()}, resel, recov,
                         feas, viol)


# -- statistics ---------------------------------------------------------------

@dataclass
class TestResult:
    metric: str
    n_a: int
    n_b: int
    mean_a: float
    mean_b: float
    t: float
    p: float
    cohen_d: float
    alpha: float = 0.05

    @property
    def significant(self) -> bool:
        return self.p < self.alpha

    def text(self) -> str:
        return (f"{self.metric}: A mean={self.mean_a:.6g} (n={self.n_a}) "
                f"B mean={self.mean_b:.6g} (n={self.n_b}) t={self.t:.4f} p={self.p:.4g} "
                f"d={self.cohen_d:.4f} {'significant' if self.significant else 'not significant'} "
                f"at alpha={self.alpha}")


def cohen_d(a: list, b: list) -> float:
    """Standardized mean difference with the pooled standard deviation."""
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least two values")
    va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
    pooled = math.sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2))
    if pooled == 0:
        return 0.0 if np.mean(a) == np.mean(b) else math.copysign(math.inf, np.mean(a) - np.mean(b))
    return float((np.mean(a) - np.mean(b)) / pooled)


def compare_samples(a: list, b: list, metric: str = "value", alpha: float = 0.05) -> TestResult:
    """Two-tailed independent two-sample t-test plus Cohen's d."""
    t, p = sps.ttest_ind(a, b)
    return TestResult(metric, len(a), len(b), float(np.mean(a)), float(np.mean(b)),
                      float(t), float(p), cohen_d(a, b), alpha)


def column_values(path, column: str) -> list:
    rows = read_csv(Path(path).read_text())
    out = []
    for r in rows:
        if column not in r:
            raise KeyError(f"{path}: no column {column!r}")
        if r[column] != "":
            out.append(float(r[column]))
    return out


def compare_csvs(files_a: list, files_b: list, column: str = "selection_s", unit: str = "run",
                 alpha: float = 0.05) -> TestResult:
    """t-test between two groups of metrics CSVs.

    ``unit="run"`` uses one mean per file (repetitions as samples);
    ``unit="job"`` pools every job row.
    """
    def sample(files):
        if unit == "run":
            return [float(np.mean(column_values(f, column))) for f in files]
        if unit == "job":
            return [v for f in files for v in column_values(f, column)]
        raise ValueError(f"unknown unit {unit!r}")
    return compare_samples(sample(files_a), sample(files_b), column, alpha)
