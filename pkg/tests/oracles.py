"""Independent brute-force reference implementations used as test oracles.

Nothing here imports the graph algorithms under test; the oracles work
on plain adjacency matrices.
"""

from __future__ import annotations

import math
import random

from saferestart.trace_model import CallGraph, ServiceRef


def random_digraph(rng: random.Random, max_nodes: int = 12, ns: str = "t") -> CallGraph:
    n = rng.randint(1, max_nodes)
    p = rng.choice([0.05, 0.1, 0.2, 0.35, 0.5])
    refs = [ServiceRef(ns, f"n{i:02d}") for i in range(n)]
    edges = {(refs[u], refs[v]): rng.randint(1, 5)
             for u in range(n) for v in range(n) if u != v and rng.random() < p}
    return CallGraph(refs, edges)


def reach_matrix(graph: CallGraph) -> tuple[list[ServiceRef], list[list[bool]]]:
    """Floyd-Warshall transitive closure; reach[i][j] means a path of length >= 0."""
    nodes = sorted(graph.services, key=str)
    pos = {s: i for i, s in enumerate(nodes)}
    n = len(nodes)
    reach = [[i == j for j in range(n)] for i in range(n)]
    for (u, v) in graph.edges:
        reach[pos[u]][pos[v]] = True
    for k in range(n):
        for i in range(n):
            if reach[i][k]:
                row_k = reach[k]
                row_i = reach[i]
                for j in range(n):
                    if row_k[j]:
                        row_i[j] = True
    return nodes, reach


def scc_partition(graph: CallGraph) -> set[frozenset[ServiceRef]]:
    nodes, reach = reach_matrix(graph)
    n = len(nodes)
    return {frozenset(nodes[j] for j in range(n) if reach[i][j] and reach[j][i]) for i in range(n)}


def condensation_edges(graph: CallGraph) -> set[tuple[frozenset, frozenset]]:
    part = scc_partition(graph)
    owner = {s: c for c in part for s in c}
    return {(owner[u], owner[v]) for (u, v) in graph.edges if owner[u] != owner[v]}


def upstream_count(graph: CallGraph, service: ServiceRef) -> int:
    nodes, reach = reach_matrix(graph)
    t = nodes.index(service)
    return sum(1 for i in range(len(nodes)) if i != t and reach[i][t])


def downstream_set(graph: CallGraph, service: ServiceRef) -> set[ServiceRef]:
    nodes, reach = reach_matrix(graph)
    s = nodes.index(service)
    return {nodes[j] for j in range(len(nodes)) if reach[s][j]}


def nearest_rank(values: list[float], p: float) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    return ordered[max(1, math.ceil(p / 100 * len(ordered))) - 1]


def chain(n: int, ns: str = "c") -> tuple[list[ServiceRef], CallGraph]:
    refs = [ServiceRef(ns, f"s{i:03d}") for i in range(n)]
    return refs, CallGraph(refs, {(refs[i], refs[i + 1]): 1 for i in range(n - 1)})


def independent_violations(graph: CallGraph, g, th) -> list[str]:
    """RecoveryGroup invariants checked with the brute-force oracles only."""
    out = []
    flat = [s for b in g.batches for s in b]
    if len(flat) != len(set(flat)) or set(flat) != set(g.restart_set):
        out.append("coverage")
    if g.symptom_service not in g.restart_set:
        out.append("symptom")
    part = scc_partition(graph)
    own = next(c for c in part if g.symptom_service in c)
    reachable = downstream_set(graph, g.symptom_service)
    if not set(g.restart_set) <= reachable:
        out.append("restart_set outside downstream closure")
    if len(g.restart_set) > th.max_group_size and not (g.truncated and set(g.restart_set) == own):
        out.append("cap")
    if g.truncated != (len(reachable) > th.max_group_size):
        out.append("truncated flag")
    if any(len(b) > th.max_batch_size for b in g.batches):
        out.append("batch size")
    if not g.drain_set <= set(g.restart_set):
        out.append("drain subset")
    fan_in = {s: 0 for s in graph.services}
    for (_, v) in graph.edges:
        fan_in[v] += 1
    if g.drain_set != {s for s in g.restart_set if fan_in[s] > th.drain_threshold}:
        out.append("drain membership")
    owner = {s: c for c in part for s in c}
    idx = {s: i for i, b in enumerate(g.batches) for s in b}
    for (u, v) in graph.edges:
        if u in idx and v in idx and owner[u] != owner[v] and not idx[v] < idx[u]:
            out.append(f"order {u}->{v}")
    # whole SCCs are kept or dropped
    for comp in part:
        kept = comp & set(g.restart_set)
        if kept and kept != comp:
            out.append("split SCC")
    if g.blast_radius_estimate != upstream_count(graph, g.symptom_service):
        out.append("blast radius")
    return out
