import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chain, condensation_edges, independent_violations, random_digraph, scc_partition
from saferestart.errors import ConfigError, NotFoundError
from saferestart.recovery_groups import (
    InferenceThresholds,
    RecoveryGroup,
    Symptom,
    check_group_invariants,
    infer_recovery_group,
    parallelism_profile,
    scc_condensation,
)
from saferestart.trace_model import CallGraph, ServiceRef

A, B, C = ServiceRef("p", "a"), ServiceRef("p", "b"), ServiceRef("p", "c")


# -- SCC / condensation ------------------------------------------------------------


def test_scc_matches_mutual_reachability():
    rng = random.Random(1)
    for _ in range(400):
        g = random_digraph(rng)
        cond = scc_condensation(g)
        assert {frozenset(c) for c in cond.components} == scc_partition(g)
        got = {(frozenset(cond.components[i]), frozenset(cond.components[j])) for i, j in cond.edges}
        assert got == condensation_edges(g)


def test_scc_dag_is_all_singletons():
    _, g = chain(6)
    cond = scc_condensation(g)
    assert all(len(c) == 1 for c in cond.components)


def test_scc_three_cycle():
    g = CallGraph([A, B, C], {(A, B): 1, (B, C): 1, (C, A): 1})
    cond = scc_condensation(g)
    assert [set(c) for c in cond.components] == [{A, B, C}] and not cond.edges


def test_scc_components_are_sinks_first():
    rng = random.Random(2)
    for _ in range(100):
        cond = scc_condensation(random_digraph(rng))
        assert all(i > j for i, j in cond.edges)


def test_scc_on_adjacency_mapping():
    cond = scc_condensation({1: [2], 2: [1, 3], 3: []})
    assert {frozenset(c) for c in cond.components} == {frozenset({1, 2}), frozenset({3})}


# -- inference ---------------------------------------------------------------------


def test_isolated_symptom():
    g = infer_recovery_group(CallGraph([A], {}), A)
    assert g.restart_set == (A,) and g.batches == ((A,),)
    assert g.drain_set == frozenset() and not g.truncated
    assert parallelism_profile(g).batch_count == 1 and not parallelism_profile(g).admits_parallelism


def test_cycle_example():
    graph = CallGraph([A, B, C], {(A, B): 1, (B, C): 1, (C, B): 1})
    g = infer_recovery_group(graph, Symptom(A))
    assert set(g.restart_set) == {A, B, C}
    assert g.batches == ((B, C), (A,))
    prof = parallelism_profile(g)
    assert prof.batch_count == 2 and prof.admits_parallelism


def test_chain_of_forty_truncates_to_thirty_nearest():
    refs, graph = chain(41)
    g = infer_recovery_group(graph, refs[0])
    assert len(g.restart_set) == 30 and g.truncated
    assert set(g.restart_set) == set(refs[:30])
    # the farthest kept service restarts first
    assert g.batches[0] == (refs[29],)


def test_symptom_scc_larger_than_cap_is_kept_whole():
    refs = [ServiceRef("p", f"r{i:02d}") for i in range(8)]
    edges = {(refs[i], refs[(i + 1) % 8]): 1 for i in range(8)}
    th = InferenceThresholds(max_group_size=5, max_batch_size=3)
    g = infer_recovery_group(CallGraph(refs, edges), refs[0], th)
    assert set(g.restart_set) == set(refs) and g.truncated
    # split across consecutive batches of at most 3
    assert [len(b) for b in g.batches] == [3, 3, 2]
    assert check_group_invariants(CallGraph(refs, edges), g, th) == []


def test_drain_uses_full_graph_fan_in():
    hub = ServiceRef("p", "hub")
    callers = [ServiceRef("p", f"c{i:02d}") for i in range(21)]
    leaf = ServiceRef("p", "leaf")
    edges = {(c, hub): 1 for c in callers}
    edges[(hub, leaf)] = 1
    graph = CallGraph(callers + [hub, leaf], edges)
    g = infer_recovery_group(graph, hub)
    assert g.drain_set == {hub}
    assert g.blast_radius_estimate == 21
    assert infer_recovery_group(graph, hub, InferenceThresholds(drain_threshold=21)).drain_set == frozenset()


def test_unknown_symptom():
    with pytest.raises(NotFoundError):
        infer_recovery_group(CallGraph([A], {}), B)


def test_thresholds_validation():
    with pytest.raises(ConfigError):
        InferenceThresholds(max_group_size=0)
    with pytest.raises(ConfigError):
        InferenceThresholds(max_group_size=4, max_batch_size=5)
    with pytest.raises(ConfigError):
        InferenceThresholds.from_json('{"max_group_size": 10, "colour": 1}')
    assert InferenceThresholds.from_json('{"max_batch_size": 2}').max_batch_size == 2


def test_json_round_trip_and_determinism():
    rng = random.Random(5)
    for _ in range(50):
        graph = random_digraph(rng)
        s = sorted(graph.services)[0]
        a = infer_recovery_group(graph, s)
        rebuilt = CallGraph(list(reversed(sorted(graph.services))), dict(reversed(list(graph.edges.items()))))
        b = infer_recovery_group(rebuilt, s)
        assert a.to_json(sort_keys=True) == b.to_json(sort_keys=True)
        assert RecoveryGroup.from_json(a.to_json()) == a


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 12), st.integers(1, 5), st.integers(1, 4))
def test_invariants_hold_on_random_graphs(seed, cap, batch, drain):
    rng = random.Random(seed)
    graph = random_digraph(rng, max_nodes=14)
    th = InferenceThresholds(drain_threshold=drain, max_group_size=max(cap, batch), max_batch_size=batch)
    for s in sorted(graph.services)[:3]:
        g = infer_recovery_group(graph, s, th)
        assert independent_violations(graph, g, th) == []
        assert check_group_invariants(graph, g, th) == []


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8))
def test_cap_does_not_change_order_among_kept(seed, cap):
    graph = random_digraph(random.Random(seed))
    s = sorted(graph.services)[-1]
    full = infer_recovery_group(graph, s, InferenceThresholds(max_group_size=1000, max_batch_size=5))
    capped = infer_recovery_group(graph, s, InferenceThresholds(max_group_size=max(cap, 5), max_batch_size=5))
    assert set(capped.restart_set) <= set(full.restart_set)
    fi, ci = full.batch_index(), capped.batch_index()
    part = scc_partition(graph)
    owner = {x: c for c in part for x in c}
    for (u, v) in graph.edges:
        if u in ci and v in ci and owner[u] != owner[v]:
            assert fi[v] < fi[u] and ci[v] < ci[u]
