"""Restart-coupled recovery groups inferred from a call graph.

Given a symptom service S, the group is the SCC containing S plus every
SCC downstream of it, capped by distance from S. Services are restarted
in batches ordered callees-first over the condensation DAG, and services
with many callers on the full graph must be drained beforehand.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence, TypeVar

from .errors import ConfigError
from .trace_model import CallGraph, ServiceRef, TimeWindow, upstream_indices

N = TypeVar("N", bound=Hashable)


@dataclass(frozen=True)
class Symptom:
    service: ServiceRef
    window: TimeWindow = field(default_factory=TimeWindow.unbounded)


@dataclass(frozen=True)
class InferenceThresholds:
    drain_threshold: int = 20
    max_group_size: int = 30
    max_batch_size: int = 5

    def __post_init__(self) -> None:
        for name in ("drain_threshold", "max_group_size", "max_batch_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.max_batch_size > self.max_group_size:
            raise ConfigError("max_batch_size must not exceed max_group_size")

    @classmethod
    def from_json(cls, text: str) -> "InferenceThresholds":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"thresholds file is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("thresholds file must hold a JSON object")
        unknown = set(obj) - {"drain_threshold", "max_group_size", "max_batch_size"}
        if unknown:
            raise ConfigError(f"unknown threshold keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class RecoveryGroup:
    symptom_service: ServiceRef
    restart_set: tuple[ServiceRef, ...]
    batches: tuple[tuple[ServiceRef, ...], ...]
    drain_set: frozenset[ServiceRef]
    blast_radius_estimate: int
    truncated: bool

    def __contains__(self, service: object) -> bool:
        return service in self.restart_set or service in self.drain_set

    def batch_index(self) -> dict[ServiceRef, int]:
        return {s: i for i, batch in enumerate(self.batches) for s in batch}

    def to_json_obj(self) -> dict:
        return {
            "symptom_service": str(self.symptom_service),
            "restart_set": [str(s) for s in self.restart_set],
            "batches": [[str(s) for s in b] for b in self.batches],
            "drain_set": sorted(str(s) for s in self.drain_set),
            "blast_radius_estimate": self.blast_radius_estimate,
            "truncated": self.truncated,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_json_obj(), **kwargs)

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "RecoveryGroup":
        parse = ServiceRef.parse
        return cls(
            symptom_service=parse(obj["symptom_service"]),
            restart_set=tuple(parse(s) for s in obj["restart_set"]),
            batches=tuple(tuple(parse(s) for s in b) for b in obj["batches"]),
            drain_set=frozenset(parse(s) for s in obj["drain_set"]),
            blast_radius_estimate=int(obj["blast_radius_estimate"]),
            truncated=bool(obj["truncated"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "RecoveryGroup":
        return cls.from_json_obj(json.loads(text))


# -- strongly connected components ---------------------------------------------


def _tarjan(nodes: Sequence[int], succ: Callable[[int], Iterable[int]]) -> list[list[int]]:
    """Iterative Tarjan. Components come out sinks-first (reverse topological)."""
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    out: list[list[int]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        work = [(root, iter(succ(root)))]
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ(w))))
                    advanced = True
                    break
                if w in on_stack and index[w] < low[v]:
                    low[v] = index[w]
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                if low[v] < low[parent]:
                    low[parent] = low[v]
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comp.sort()
                out.append(comp)
    return out


@dataclass(frozen=True)
class Condensation:
    """SCC partition plus the DAG obtained by contracting each SCC.

    ``components`` are listed sinks-first; ``edges`` holds index pairs
    ``(i, j)`` meaning some member of component ``i`` calls a member of ``j``.
    """

    components: tuple[tuple, ...]
    component_of: Mapping
    edges: frozenset[tuple[int, int]]


def scc_condensation(
    graph: CallGraph | Mapping[N, Iterable[N]],
    nodes: Iterable[N] | None = None,
) -> Condensation:
    """Condense a call graph, or a plain adjacency mapping, into SCCs.

    For a mapping, ``nodes`` optionally restricts the subgraph; edges to
    nodes outside it are ignored. Node order (for determinism) is the
    sorted order of the node labels.
    """
    if isinstance(graph, CallGraph):
        succ_lists = graph.successor_lists()
        if nodes is None:
            labels: list = list(graph.sorted_services())
            ids = list(range(len(labels)))
            member = None
        else:
            chosen = sorted(graph.index_of(s) for s in set(nodes))
            member = set(chosen)
            labels = [graph.service_at(i) for i in chosen]
            ids = chosen
        lookup = {i: graph.service_at(i) for i in ids}

        def succ(i: int) -> Iterable[int]:
            if member is None:
                return succ_lists[i]
            return [j for j in succ_lists[i] if j in member]

        comps = _tarjan(ids, succ)
        components = tuple(tuple(lookup[i] for i in c) for c in comps)
        raw_edges = ((u, v) for u in ids for v in succ(u))
        comp_of_id = {i: k for k, c in enumerate(comps) for i in c}
    else:
        adjacency = graph
        all_nodes = set(adjacency)
        for targets in adjacency.values():
            all_nodes.update(targets)
        if nodes is not None:
            all_nodes = set(nodes)
        labels = sorted(all_nodes)
        pos = {n: i for i, n in enumerate(labels)}
        # self-loops never change the partition
        adj = [sorted({pos[t] for t in adjacency.get(n, ()) if t in pos and t != n}) for n in labels]
        comps = _tarjan(list(range(len(labels))), lambda i: adj[i])
        components = tuple(tuple(labels[i] for i in c) for c in comps)
        raw_edges = ((u, v) for u in range(len(labels)) for v in adj[u])
        comp_of_id = {i: k for k, c in enumerate(comps) for i in c}
        lookup = dict(enumerate(labels))

    cedges = set()
    for u, v in raw_edges:
        cu, cv = comp_of_id[u], comp_of_id[v]
        if cu != cv:
            cedges.add((cu, cv))
    component_of = {lookup[i]: k for i, k in comp_of_id.items()}
    return Condensation(components, component_of, frozenset(cedges))


# -- inference -----------------------------------------------------------------


def _downstream(succ: Sequence[Sequence[int]], start: int) -> list[int]:
    seen = {start}
    order = [start]
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in succ[v]:
            if w not in seen:
                seen.add(w)
                order.append(w)
                queue.append(w)
    order.sort()
    return order


def infer_recovery_group(
    graph: CallGraph,
    symptom: Symptom | ServiceRef,
    thresholds: InferenceThresholds | None = None,
) -> RecoveryGroup:
    """Compute the recovery group for a symptom service.

    Raises NotFoundError if the symptom service is not in ``graph``.
    """
    thresholds = thresholds or InferenceThresholds()
    service = symptom.service if isinstance(symptom, Symptom) else symptom
    s = graph.index_of(service)
    succ = graph.successor_lists()
    pred = graph.predecessor_lists()

    affected = _downstream(succ, s)
    member = set(affected)
    comps = _tarjan(affected, lambda v: [w for w in succ[v] if w in member])
    comp_of = {v: k for k, c in enumerate(comps) for v in c}
    csucc: list[set[int]] = [set() for _ in comps]
    for v in affected:
        cv = comp_of[v]
        for w in succ[v]:
            cw = comp_of[w]
            if cw != cv:
                csucc[cv].add(cw)

    # breadth-first distance over the condensation from S's component
    root = comp_of[s]
    dist = {root: 0}
    queue = deque([root])
    while queue:
        c = queue.popleft()
        for d in sorted(csucc[c], key=lambda k: comps[k][0]):
            if d not in dist:
                dist[d] = dist[c] + 1
                queue.append(d)

    cap = thresholds.max_group_size
    ranked = sorted(dist, key=lambda k: (dist[k], comps[k][0]))
    kept: set[int] = set()
    size = 0
    for k in ranked:
        if k != root and size + len(comps[k]) > cap:
            # stop at the first SCC that does not fit: every kept SCC
            # then has its BFS parent kept as well
            break
        kept.add(k)
        size += len(comps[k])
    truncated = len(affected) > cap

    # longest-path level from the sinks of the kept condensation; components
    # on one level share no edges, so they can restart in the same batch
    level: dict[int, int] = {}
    for k in range(len(comps)):  # Tarjan emits sinks first
        if k in kept:
            level[k] = 1 + max((level[d] for d in csucc[k] if d in kept), default=-1)

    batch_cap = thresholds.max_batch_size
    batches: list[list[int]] = []
    by_level: dict[int, list[int]] = {}
    for k in sorted(kept, key=lambda k: (level[k], comps[k][0])):
        by_level.setdefault(level[k], []).append(k)
    for lvl in sorted(by_level):
        current: list[int] = []
        for k in by_level[lvl]:
            comp = comps[k]
            if len(comp) > batch_cap:
                if current:
                    batches.append(current)
                    current = []
                for i in range(0, len(comp), batch_cap):
                    batches.append(list(comp[i:i + batch_cap]))
                continue
            if len(current) + len(comp) > batch_cap:
                batches.append(current)
                current = []
            current.extend(comp)
        if current:
            batches.append(current)

    to_ref = graph.service_at
    out_batches = tuple(tuple(to_ref(v) for v in sorted(b)) for b in batches)
    restart_set = tuple(ref for b in out_batches for ref in b)
    drain = frozenset(
        to_ref(v) for b in batches for v in b if len(pred[v]) > thresholds.drain_threshold
    )
    return RecoveryGroup(
        symptom_service=service,
        restart_set=restart_set,
        batches=out_batches,
        drain_set=drain,
        blast_radius_estimate=len(upstream_indices(graph, s)),
        truncated=truncated,
    )


@dataclass(frozen=True)
class ParallelismProfile:
    batch_count: int
    admits_parallelism: bool


def parallelism_profile(group: RecoveryGroup) -> ParallelismProfile:
    n = len(group.batches)
    return ParallelismProfile(n, n >= 2)


def check_group_invariants(
    graph: CallGraph, group: RecoveryGroup, thresholds: InferenceThresholds
) -> list[str]:
    """Return a list of violated RecoveryGroup invariants (empty if none).

    A symptom SCC larger than the cap is kept whole and flagged; that is
    the one permitted way for the restart set to exceed ``max_group_size``.
    """
    problems = []
    flat = [s for b in group.batches for s in b]
    if len(flat) != len(set(flat)):
        problems.append("batches are not disjoint")
    if set(flat) != set(group.restart_set) or len(group.restart_set) != len(set(group.restart_set)):
        problems.append("union(batches) != restart_set")
    if group.symptom_service not in group.restart_set:
        problems.append("symptom service missing from restart_set")
    if len(group.restart_set) > thresholds.max_group_size:
        cond = scc_condensation(graph)
        own = set(cond.components[cond.component_of[group.symptom_service]])
        if not (group.truncated and set(group.restart_set) == own):
            problems.append("restart_set exceeds max_group_size")
    if any(len(b) > thresholds.max_batch_size for b in group.batches):
        problems.append("batch larger than max_batch_size")
    if any(len(b) == 0 for b in group.batches):
        problems.append("empty batch")
    if not group.drain_set <= set(group.restart_set):
        problems.append("drain_set not a subset of restart_set")
    for s in group.drain_set:
        if graph.fan_in(s) <= thresholds.drain_threshold:
            problems.append(f"{s} drained with fan-in {graph.fan_in(s)}")
    for s in group.restart_set:
        if graph.fan_in(s) > thresholds.drain_threshold and s not in group.drain_set:
            problems.append(f"{s} has fan-in {graph.fan_in(s)} but is not drained")
    cond = scc_condensation(graph)
    pos = group.batch_index()
    for (u, v) in graph.edges:
        if u in pos and v in pos and cond.component_of[u] != cond.component_of[v]:
            if not pos[v] < pos[u]:
                problems.append(f"edge {u}->{v} violates downstream-first order")
    return problems
