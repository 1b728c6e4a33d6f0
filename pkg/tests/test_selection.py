import math
from fractions import Fraction

import pytest
from hypothesis import assume, given, settings, strategies as st

from agentsel.selection import (
    INF, CacheKey, CostCache, CostMatrix, CostParams, DivisionByZero, ResourceView, Selector,
    connectivity_penalty, cost, feasible, infeasible_jobs, long_job_penalty, select_candidates,
    utilization, view_of,
)
from agentsel.topology import AggregatedGroupState
from agentsel.types import ConnectivityProfile, JobClass, ResourceVector
from conftest import make_agent, make_job

P = CostParams()


def oracle_cost(avail, req, walltime, weights, scores, beta=1.0, tau=20.0):
    """Independent re-derivation with exact fractions."""
    u = sum(Fraction(w) * Fraction(r) / Fraction(a) for w, r, a in zip(weights, req, avail) if r)
    pen = 0 if scores is None else Fraction(beta) * (1 - sum(map(Fraction, scores)) / len(scores))
    long_ = Fraction(walltime - tau) / Fraction(tau) if walltime > tau else 0
    return u + pen + long_


@pytest.mark.parametrize("req,avail,walltime,cls,dtns,conn,weights", [
    ((1, 4, 25, 0), (4, 16, 250, 0), 10.0, JobClass.LIGHTWEIGHT, (), {}, (0.4, 0.3, 0.2, 0.1)),
    ((2, 8, 50, 0), (4, 16, 250, 0), 30.0, JobClass.STANDARD, (), {}, (0.4, 0.3, 0.2, 0.1)),
    ((4, 16, 10, 4), (8, 32, 500, 4), 120.0, JobClass.RESOURCE_INTENSIVE, (), {},
     (0.25, 0.25, 0.1, 0.4)),
    # data-bearing job: 0.1 of weight moves from cpu to disk
    ((1, 2, 10, 0), (2, 8, 100, 0), 6.0, JobClass.LIGHTWEIGHT, ("d1", "d2"),
     {"d1": 0.8, "d2": 0.5}, (0.3, 0.3, 0.3, 0.1)),
    ((1, 2, 10, 0), (2, 8, 100, 0), 6.0, JobClass.LIGHTWEIGHT, ("d1", "d9"),
     {"d1": 0.8}, (0.3, 0.3, 0.3, 0.1)),
])
def test_cost_matches_oracle(req, avail, walltime, cls, dtns, conn, weights):
    a = make_agent(cpu=avail[0], ram=avail[1], disk=avail[2], gpu=avail[3], conn=conn)
    j = make_job(cpu=req[0], ram=req[1], disk=req[2], gpu=req[3], walltime=walltime,
                 job_class=cls, dtns=dtns)
    scores = [conn.get(d, 0.0) for d in sorted(dtns)] if dtns else None
    expected = oracle_cost(avail, req, walltime, weights, scores)
    assert cost(a, j, P) == pytest.approx(float(expected), rel=1e-12, abs=1e-15)


def test_hand_worked_value():
    # 0.4*1/4 + 0.3*4/16 + 0.2*25/250 = 0.195
    a = make_agent(cpu=4, ram=16, disk=250)
    assert cost(a, make_job(cpu=1, ram=4, disk=25), P) == pytest.approx(0.195, abs=1e-15)


@pytest.mark.parametrize("s_bar,expected", [(1.0, 1.0), (0.0, 2.0), (0.5, 1.5)])
def test_connectivity_penalty_endpoints(s_bar, expected):
    a = make_agent(conn={"d1": s_bar} if s_bar else {})
    assert connectivity_penalty(a, make_job(dtns=("d1",)), P) == expected


def test_connectivity_penalty_uses_beta():
    p = CostParams(beta=2.5)
    assert connectivity_penalty(make_agent(), make_job(dtns=("d1",)), p) == 3.5
    assert connectivity_penalty(make_agent(), make_job(), p) == 1.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.floats(0, 5))
def test_penalty_range(scores, beta):
    dtns = tuple(f"d{i}" for i in range(len(scores)))
    a = make_agent(conn=dict(zip(dtns, scores)))
    pen = connectivity_penalty(a, make_job(dtns=dtns), CostParams(beta=beta))
    assert 1.0 <= pen <= 1.0 + beta + 1e-12


@pytest.mark.parametrize("walltime,expected", [(19.999, 0.0), (20.0, 0.0), (20.001, 0.001 / 20),
                                               (40.0, 1.0), (1800.0, 89.0)])
def test_long_job_boundary(walltime, expected):
    assert long_job_penalty(make_job(walltime=walltime), P) == pytest.approx(expected, abs=1e-12)


@given(st.floats(0.01, 4), st.floats(0.01, 16), st.floats(0.01, 4), st.floats(0.01, 10))
def test_cost_monotone_in_requirement(cpu, ram, extra, avail_extra):
    a = make_agent(cpu=8 + avail_extra, ram=32 + avail_extra)
    small = make_job(cpu=cpu, ram=ram)
    big = make_job(cpu=cpu + extra, ram=ram)
    assert cost(a, big, P) >= cost(a, small, P)
    # and antitone in availability
    richer = make_agent(cpu=8 + avail_extra + extra, ram=32 + avail_extra)
    assert cost(richer, small, P) <= cost(a, small, P)


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        CostParams(class_weights={JobClass.LIGHTWEIGHT: {"cpu": 0.5, "ram": 0.3, "disk": 0.1, "gpu": 0.0}})
    with pytest.raises(ValueError):
        CostParams(tau=0)
    assert CostParams(tau=40).alpha == 1 / 40


def test_division_by_zero_when_dimension_missing():
    a = make_agent(gpu=0)
    with pytest.raises(DivisionByZero):
        utilization(a, make_job(gpu=1), P)


def test_feasibility():
    a = make_agent(cpu=2, ram=4, conn={"d1": 0.5})
    assert feasible(a, make_job(cpu=2, ram=4))
    assert not feasible(a, make_job(cpu=2.01))
    strict = CostParams(strict_connectivity=True)
    assert feasible(a, make_job(dtns=("d2",)))
    assert not feasible(a, make_job(dtns=("d2",)), strict)
    a.live = False
    assert not feasible(a, make_job())


def test_group_rows_respect_exclusions():
    agg = AggregatedGroupState("L0-g001", ResourceVector(8, 32, 500, 4), ConnectivityProfile(), 3, 0)
    row = ResourceView("coord", ResourceVector(8, 32, 500, 4), ConnectivityProfile(), 0, agg, "L0-g001")
    assert feasible(row, make_job())
    assert not feasible(row, make_job(exclusions=frozenset({"L0-g001"})))


def matrix(entries):
    rows = sorted({a for a, _ in entries})
    cols = sorted({j for _, j in entries})
    return CostMatrix(rows, cols, dict(entries))


def test_candidate_threshold_membership():
    m = matrix({("a", "j"): 1.0, ("b", "j"): 1.1, ("c", "j"): 1.1000001, ("d", "j"): INF})
    got = {aid for aid in "abcd" if select_candidates(m, aid, P)}
    assert got == {"a", "b"}


def test_infinite_column_never_nominated():
    m = matrix({("a", "j"): INF, ("b", "j"): INF, ("a", "k"): 0.2, ("b", "k"): INF})
    assert infeasible_jobs(m) == ["j"]
    assert [c[1] for c in select_candidates(m, "a", P)] == ["k"]
    assert select_candidates(m, "b", P) == []


def test_candidates_sorted_and_batched():
    m = matrix({("a", f"j{i}"): 1.0 / (i + 1) for i in range(12)})
    c = select_candidates(m, "a", P, batch=5)
    assert len(c) == 5 and [x[2] for x in c] == sorted(x[2] for x in c)


def test_argmin_ties_go_to_smallest_id():
    m = matrix({("b", "j"): 0.5, ("a", "j"): 0.5, ("c", "j"): 0.7})
    assert m.argmin("j") == "a"
    assert m.column_min("j") == 0.5


cost_matrices = st.dictionaries(
    st.tuples(st.sampled_from("abcde"), st.sampled_from(["j0", "j1", "j2"])),
    st.one_of(st.floats(0.001, 100), st.just(INF)), min_size=1)


@given(cost_matrices, st.floats(0.01, 1000))
def test_argmin_and_candidates_invariant_under_uniform_scaling(entries, k):
    m = matrix(entries)
    scaled = CostMatrix(m.rows, m.cols, {key: v * k for key, v in m.entries.items()})
    params = CostParams(theta=0.1)
    for j in m.cols:
        if m.column_min(j) < INF:
            # ties within float rounding may reorder, so compare values not ids
            assert m.get(scaled.argmin(j), j) == pytest.approx(m.column_min(j), rel=1e-9)
    for a in m.rows:
        base = {c[1] for c in select_candidates(m, a, params, batch=99)}
        sc = {c[1] for c in select_candidates(scaled, a, params, batch=99)}
        # membership may only differ for entries sitting exactly on the threshold
        for j in base ^ sc:
            assert m.get(a, j) == pytest.approx((1 + params.theta) * m.column_min(j), rel=1e-9)


@given(st.lists(st.tuples(st.floats(0.5, 8), st.floats(0.5, 32)), min_size=2, max_size=6),
       st.floats(0.05, 0.5), st.floats(0.1, 0.5), st.sampled_from([0.5, 2.0, 4.0, 10.0]))
def test_argmin_invariant_when_resources_scale_together(caps, cpu, ram, k):
    agents = [make_agent(f"a{i}", cpu=c, ram=r, disk=100) for i, (c, r) in enumerate(caps)]
    scaled = [make_agent(f"a{i}", cpu=c * k, ram=r * k, disk=100 * k) for i, (c, r) in enumerate(caps)]
    j1 = make_job(cpu=cpu, ram=ram, disk=1)
    j2 = make_job(cpu=cpu * k, ram=ram * k, disk=k)
    sel = Selector(P, use_cache=False)
    m1 = sel.build_matrix([view_of(a) for a in agents], [j1])
    m2 = sel.build_matrix([view_of(a) for a in scaled], [j2])
    for a in m1.rows:
        assert m1.get(a, j1.id) == pytest.approx(m2.get(a, j2.id), rel=1e-12)
    best1 = m1.column_min(j1.id)
    assert m1.get(m2.argmin(j2.id), j1.id) == pytest.approx(best1, rel=1e-9)


def test_cache_lru_and_ttl():
    c = CostCache(capacity=2, ttl_s=1.0)
    calls = []

    def f(v):
        return lambda: calls.append(v) or v

    k1, k2, k3 = (CacheKey("a", j, 0, 0) for j in "xyz")
    assert c.cached_cost(k1, f(1), 0) == 1
    c.cached_cost(k2, f(2), 5)
    assert c.cached_cost(k1, f(9), 10) == 1  # hit, k1 becomes most recent
    c.cached_cost(k3, f(3), 30)  # evicts k2, the least recently used
    assert c.evictions == 1 and len(c) == 2
    c.cached_cost(k1, f(1), 40)
    assert calls == [1, 2, 3]
    c.cached_cost(k1, f(5), 2 * 10**9)  # expired
    assert calls[-1] == 5
    assert c.hits == 2 and c.misses == 4


def test_version_bump_misses_cache():
    sel = Selector(P)
    a = make_agent()
    j = make_job()
    v1 = sel.entry(view_of(a), j)
    a.set_available(ResourceVector(2, 8, 100, 0))
    v2 = sel.entry(view_of(a), j)
    assert v1 != v2 and sel.cache.misses == 2


pops = st.lists(st.tuples(st.floats(0.5, 8), st.floats(1, 32), st.floats(10, 500), st.integers(0, 4),
                          st.dictionaries(st.sampled_from(["d0", "d1", "d2"]), st.floats(0, 1), max_size=3)),
                min_size=1, max_size=5)
jobsets = st.lists(st.tuples(st.floats(0.1, 4), st.floats(0.1, 16), st.floats(1, 100), st.integers(0, 2),
                             st.floats(6, 100), st.lists(st.sampled_from(["d0", "d1", "d2"]), max_size=2)),
                   min_size=1, max_size=6)


@settings(max_examples=60)
@given(pops, jobsets, st.integers(0, 3))
def test_cache_and_no_cache_bit_equal(pop, specs, repeats):
    agents = [make_agent(f"a{i}", cpu=c, ram=r, disk=d, gpu=g, conn=conn)
              for i, (c, r, d, g, conn) in enumerate(pop)]
    jobs = [make_job(f"j{i}", cpu=c, ram=r, disk=d, gpu=g, walltime=w, dtns=tuple(dt))
            for i, (c, r, d, g, w, dt) in enumerate(specs)]
    views = [view_of(a) for a in agents]
    plain = Selector(P, use_cache=False).build_matrix(views, jobs)
    cached = Selector(P, use_cache=True)
    for _ in range(repeats + 1):
        m = cached.build_matrix(views, jobs)
        assert m.entries == plain.entries  # exact, including INF placement
    if repeats:
        assert cached.cache.hits > 0


@settings(max_examples=60)
@given(pops, jobsets, st.floats(0, 0.5))
def test_fast_candidates_equal_full_matrix(pop, specs, theta):
    agents = [make_agent(f"a{i}", cpu=c, ram=r, disk=d, gpu=g, conn=conn)
              for i, (c, r, d, g, conn) in enumerate(pop)]
    jobs = [make_job(f"j{i}", cpu=c, ram=r, disk=d, gpu=g, walltime=w, dtns=tuple(dt))
            for i, (c, r, d, g, w, dt) in enumerate(specs)]
    params = CostParams(theta=theta)
    views = [view_of(a) for a in agents]
    full = Selector(params, use_cache=False).build_matrix(views, jobs)
    for me in views:
        peers = [v for v in views if v.id != me.id]
        fast = Selector(params).candidates(me, peers, jobs, batch=99)
        assert fast == select_candidates(full, me.id, params, batch=99)
