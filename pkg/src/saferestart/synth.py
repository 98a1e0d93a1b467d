"""Seeded synthetic topologies for benchmarks and simulation scenarios."""

from __future__ import annotations

import random

from .errors import ConfigError
from .trace_model import CallGraph, ServiceRef


def preferential_attachment(nodes: int, edges: int, seed: int = 0, namespace: str = "synth",
                            back_edge_prob: float = 0.02) -> CallGraph:
    """Scale-free call graph with exactly ``min(edges, nodes*(nodes-1))`` edges.

    Each new service attaches to an existing one chosen with probability
    proportional to degree + 1, as caller or callee with equal odds. The
    remaining edges join a caller drawn by out-degree + 1 to a callee
    drawn by in-degree + 1, which concentrates callers on a few hubs.
    Those edges follow the attachment tree's topological order except
    with probability ``back_edge_prob``, so cycles stay small and rare.
    No self-loops, no duplicate edges; weights are 1..10.
    """
    if nodes < 1 or edges < 0:
        raise ConfigError("need nodes >= 1 and edges >= 0")
    rng = random.Random(seed)
    width = max(5, len(str(nodes - 1)))
    refs = [ServiceRef(namespace, f"svc-{i:0{width}d}") for i in range(nodes)]
    edges = min(edges, nodes * (nodes - 1))
    chosen: dict[tuple[int, int], int] = {}
    # one ticket per node plus one per unit of in/out degree
    in_tickets: list[int] = [0]
    out_tickets: list[int] = [0]

    def add(u: int, v: int) -> None:
        chosen[(u, v)] = rng.randint(1, 10)
        out_tickets.append(u)
        in_tickets.append(v)

    for i in range(1, nodes):
        if len(chosen) < edges:
            if rng.random() < 0.5:
                add(i, rng.choice(in_tickets))
            else:
                add(rng.choice(out_tickets), i)
        in_tickets.append(i)
        out_tickets.append(i)

    rank = _topo_rank(nodes, chosen)
    attempts = 0
    dense = edges > nodes * (nodes - 1) // 2
    while len(chosen) < edges:
        attempts += 1
        if dense or attempts > 50 * edges + 1000:
            # fall back to uniform sampling over the missing pairs
            missing = [(u, v) for u in range(nodes) for v in range(nodes) if u != v and (u, v) not in chosen]
            for u, v in rng.sample(missing, edges - len(chosen)):
                add(u, v)
            break
        u, v = rng.choice(out_tickets), rng.choice(in_tickets)
        if rank[u] > rank[v] and rng.random() >= back_edge_prob:
            u, v = v, u
        if u != v and (u, v) not in chosen:
            add(u, v)

    return CallGraph(refs, {(refs[u], refs[v]): w for (u, v), w in chosen.items()})


def _topo_rank(nodes: int, edges: dict[tuple[int, int], int]) -> list[int]:
    indeg = [0] * nodes
    succ: list[list[int]] = [[] for _ in range(nodes)]
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1
    ready = [i for i in range(nodes) if indeg[i] == 0]
    rank = [0] * nodes
    k = 0
    while ready:
        u = ready.pop()
        rank[u] = k
        k += 1
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return rank


def hub_topology(seed: int = 0, *, namespace: str = "shop", gateways: int = 2, hubs: int = 4,
                 frontends: int = 44, backends: int = 12) -> CallGraph:
    """A hub-heavy application graph.

    Every frontend calls one gateway and two hubs, gateways call every
    hub, and hubs call a handful of backends. With the defaults every
    gateway and hub has more than twenty callers. ``hub-0`` also calls
    ``hub-1``, and two backends form a small cycle.
    """
    rng = random.Random(seed)
    gw = [ServiceRef(namespace, f"gateway-{i}") for i in range(gateways)]
    hub = [ServiceRef(namespace, f"hub-{i}") for i in range(hubs)]
    fe = [ServiceRef(namespace, f"frontend-{i:02d}") for i in range(frontends)]
    be = [ServiceRef(namespace, f"backend-{i:02d}") for i in range(backends)]
    e: dict[tuple[ServiceRef, ServiceRef], int] = {}
    # round-robin, so each hub and gateway is guaranteed its share of callers
    for i, f in enumerate(fe):
        targets = set()
        if gw:
            targets.add(gw[i % gateways])
        if hub:
            targets |= {hub[i % hubs], hub[(i + 1) % hubs]}
        for t in sorted(targets):
            e[(f, t)] = rng.randint(1, 10)
    for g in gw:
        for h in hub:
            e[(g, h)] = rng.randint(1, 10)
    if hubs > 1:
        e[(hub[0], hub[1])] = rng.randint(1, 10)
    if backends:
        for i, h in enumerate(hub):
            own = [be[(3 * i + k) % backends] for k in range(3)]
            for b in own + rng.sample(be, 1):
                e[(h, b)] = rng.randint(1, 10)
    if backends >= 2:
        e[(be[0], be[1])] = rng.randint(1, 10)
        e[(be[1], be[0])] = rng.randint(1, 10)
    if backends >= 4:
        e[(be[2], be[3])] = rng.randint(1, 10)
    return CallGraph(gw + hub + fe + be, {k: v for k, v in e.items() if k[0] != k[1]})
