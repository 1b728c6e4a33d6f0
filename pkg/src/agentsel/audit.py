"""Post-run audits: commit uniqueness, store linearizability, lost jobs, infeasibility."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable

from .simnet import CasResult, linearizable_cas_history
from .types import JobState, fits


def commit_audit(cas_log: Iterable) -> list:
    """Every successful install of Committed must open a fresh pending epoch.

    Walks successful CAS records per (namespace, key) in store order; a second
    Committed install without a return to Pending in between is a violation.
    """
    held = {}
    violations = []
    for r in cas_log:
        if r.outcome is not CasResult.OK:
            continue
        k = (r.namespace, r.key)
        if r.value_state == JobState.COMMITTED.value:
            if k in held:
                violations.append(f"{r.namespace}/{r.key}: committed by {r.actor} "
                                  f"while already committed by {held[k]}")
            held[k] = r.actor
        elif r.value_state == JobState.PENDING.value or r.value_state is None:
            held.pop(k, None)
    return violations


def oks_per_epoch(cas_log: Iterable) -> dict:
    """(namespace, key) -> list of Committed-Ok counts, one entry per pending epoch."""
    out = defaultdict(lambda: [0])
    for r in cas_log:
        if r.outcome is not CasResult.OK:
            continue
        k = (r.namespace, r.key)
        if r.value_state == JobState.COMMITTED.value:
            out[k][-1] += 1
        elif r.value_state == JobState.PENDING.value and out[k][-1]:
            out[k].append(0)
    return dict(out)


def linearizability_audit(cas_log: Iterable) -> list:
    return [] if linearizable_cas_history(cas_log) else ["CAS history has no sequential witness"]


def job_location(store, job_id: str, namespaces: list):
    """Deepest store record of a job following delegations down the pools."""
    found = None
    for ns in namespaces:
        entry = store._data.get(ns, {}).get(job_id)
        if entry is not None:
            found = (ns, entry[1])
    return found


def lost_job_audit(records: list, store, pool_namespaces: list, crashed: set,
                   budget_exhausted: bool) -> list:
    """No job may end orphaned: unfinished is only acceptable when time ran out,
    and even then the job must not sit with a crashed owner."""
    problems = []
    for r in records:
        if r.outcome != "Unfinished":
            continue
        loc = job_location(store, r.job_id, pool_namespaces)
        if loc is None:
            problems.append(f"{r.job_id}: missing from every pool")
            continue
        ns, job = loc
        if job.owner in crashed and job.state in (JobState.COMMITTED, JobState.RUNNING):
            problems.append(f"{r.job_id}: {job.state.value} with crashed owner {job.owner}")
        elif not budget_exhausted:
            problems.append(f"{r.job_id}: unfinished ({job.state.value} in {ns}) though run ended")
    return problems


def infeasibility_audit(records: list, jobs: dict, survivors: Iterable) -> list:
    """Jobs that did not complete, which some surviving agent could in fact hold."""
    caps = [a.capacity for a in survivors]
    bad = []
    for r in records:
        if r.outcome == "Complete":
            continue
        req = jobs[r.job_id].requirements
        if any(fits(req, c) for c in caps):
            bad.append(r.job_id)
    return bad
