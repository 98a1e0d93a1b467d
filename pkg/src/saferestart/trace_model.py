"""Span ingestion, windowed call-graph construction and dependency statistics."""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from functools import total_ordering
from typing import IO, Iterable, Iterator, Mapping, Sequence

from .errors import ConfigError, IngestError, NotFoundError

logger = logging.getLogger(__name__)


@total_ordering
@dataclass(frozen=True)
class ServiceRef:
    """A service identified by namespace and name; canonical form ``ns/name``."""

    namespace: str
    name: str

    def __post_init__(self) -> None:
        if not isinstance(self.namespace, str) or not self.namespace:
            raise ValueError("ServiceRef.namespace must be a non-empty string")
        if not isinstance(self.name, str) or not self.name:
            raise ValueError("ServiceRef.name must be a non-empty string")
        if "/" in self.namespace:
            raise ValueError(f"namespace may not contain '/': {self.namespace!r}")

    @classmethod
    def parse(cls, text: str) -> "ServiceRef":
        if not isinstance(text, str):
            raise ValueError(f"service reference must be a string, got {type(text).__name__}")
        ns, sep, name = text.partition("/")
        if not sep:
            raise ValueError(f"service reference {text!r} is not of the form 'namespace/name'")
        return cls(ns, name)

    def __str__(self) -> str:
        return f"{self.namespace}/{self.name}"

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, ServiceRef):
            return NotImplemented
        return str(self) < str(other)


class SpanStatus(enum.Enum):
    OK = "Ok"
    ERROR = "Error"


@dataclass(frozen=True)
class SpanRecord:
    trace_id: str
    span_id: str
    parent_span_id: str | None
    caller: ServiceRef | None
    callee: ServiceRef
    start_time: int
    duration: int
    status: SpanStatus = SpanStatus.OK

    @property
    def is_root(self) -> bool:
        return self.caller is None and self.parent_span_id is None


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval ``[start, end)`` in microseconds."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError(f"TimeWindow requires start < end, got [{self.start}, {self.end})")

    def __contains__(self, t: int) -> bool:
        return self.start <= t < self.end

    @classmethod
    def unbounded(cls) -> "TimeWindow":
        return cls(-(2**63), 2**63 - 1)


class CallGraph:
    """Weighted service dependency graph; immutable once built.

    Edges point from caller to callee. Services are indexed in canonical
    ``ns/name`` order so integer comparisons double as deterministic
    tie-breaking for the graph algorithms.
    """

    __slots__ = ("_services", "_edges", "window", "_index", "_succ", "_pred", "_weights")

    def __init__(
        self,
        services: Iterable[ServiceRef],
        edges: Mapping[tuple[ServiceRef, ServiceRef], int],
        window: TimeWindow | None = None,
    ) -> None:
        nodes = set(services)
        clean: dict[tuple[ServiceRef, ServiceRef], int] = {}
        for (u, v), w in edges.items():
            if u == v:
                raise ValueError(f"self-loop edge on {u}")
            if w < 1:
                raise ValueError(f"edge {u}->{v} has non-positive weight {w}")
            nodes.add(u)
            nodes.add(v)
            clean[(u, v)] = int(w)
        ordered = sorted(nodes, key=str)
        index = {s: i for i, s in enumerate(ordered)}
        succ: list[list[int]] = [[] for _ in ordered]
        pred: list[list[int]] = [[] for _ in ordered]
        weights: dict[tuple[int, int], int] = {}
        for (u, v), w in clean.items():
            iu, iv = index[u], index[v]
            succ[iu].append(iv)
            pred[iv].append(iu)
            weights[(iu, iv)] = w
        self._services = tuple(ordered)
        self._edges = dict(sorted(clean.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))))
        self.window = window if window is not None else TimeWindow.unbounded()
        self._index = index
        self._succ = tuple(tuple(sorted(s)) for s in succ)
        self._pred = tuple(tuple(sorted(p)) for p in pred)
        self._weights = weights

    # -- public read-only views ------------------------------------------------

    @property
    def services(self) -> frozenset[ServiceRef]:
        return frozenset(self._services)

    @property
    def edges(self) -> Mapping[tuple[ServiceRef, ServiceRef], int]:
        return dict(self._edges)

    def sorted_services(self) -> tuple[ServiceRef, ...]:
        return self._services

    def __contains__(self, service: object) -> bool:
        return service in self._index

    def __len__(self) -> int:
        return len(self._services)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CallGraph):
            return NotImplemented
        return (
            self._services == other._services
            and self._edges == other._edges
            and self.window == other.window
        )

    def __hash__(self) -> int:
        return hash((self._services, tuple(self._edges.items()), self.window))

    def __repr__(self) -> str:
        return f"CallGraph(services={len(self._services)}, edges={len(self._edges)})"

    def weight(self, caller: ServiceRef, callee: ServiceRef) -> int:
        return self._edges.get((caller, callee), 0)

    def callees(self, service: ServiceRef) -> tuple[ServiceRef, ...]:
        return tuple(self._services[j] for j in self._succ[self.index_of(service)])

    def callers(self, service: ServiceRef) -> tuple[ServiceRef, ...]:
        return tuple(self._services[j] for j in self._pred[self.index_of(service)])

    def fan_in(self, service: ServiceRef) -> int:
        return len(self._pred[self.index_of(service)])

    def fan_out(self, service: ServiceRef) -> int:
        return len(self._succ[self.index_of(service)])

    def index_of(self, service: ServiceRef) -> int:
        try:
            return self._index[service]
        except KeyError:
            raise NotFoundError(f"service {service} is not in the call graph") from None

    # integer-indexed adjacency for the graph algorithms
    def successor_lists(self) -> tuple[tuple[int, ...], ...]:
        return self._succ

    def predecessor_lists(self) -> tuple[tuple[int, ...], ...]:
        return self._pred

    def service_at(self, i: int) -> ServiceRef:
        return self._services[i]

    def to_json_obj(self) -> dict:
        return {
            "services": [str(s) for s in self._services],
            "edges": [[str(u), str(v), w] for (u, v), w in self._edges.items()],
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "CallGraph":
        services = [ServiceRef.parse(s) for s in obj.get("services", [])]
        edges: dict[tuple[ServiceRef, ServiceRef], int] = {}
        for row in obj.get("edges", []):
            u, v = ServiceRef.parse(row[0]), ServiceRef.parse(row[1])
            w = int(row[2]) if len(row) > 2 else 1
            edges[(u, v)] = edges.get((u, v), 0) + w
        return cls(services, edges)


# -- ingestion -----------------------------------------------------------------


class TraceFormat(enum.Enum):
    JSON_LINES = "jsonl"
    ALIBABA_CSV = "alibaba-csv"

    @classmethod
    def coerce(cls, value: "TraceFormat | str") -> "TraceFormat":
        if isinstance(value, TraceFormat):
            return value
        aliases = {"jsonl": cls.JSON_LINES, "jsonlines": cls.JSON_LINES,
                   "alibaba-csv": cls.ALIBABA_CSV, "alibabacsv": cls.ALIBABA_CSV}
        try:
            return aliases[str(value).strip().lower()]
        except KeyError:
            raise ConfigError(f"unknown trace format {value!r}") from None


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_skipped: int = 0
    self_calls_dropped: int = 0


@dataclass
class IngestResult:
    spans: list[SpanRecord] = field(default_factory=list)
    report: IngestReport = field(default_factory=IngestReport)

    def __iter__(self) -> Iterator:
        yield self.spans
        yield self.report


class _SkipRow(Exception):
    pass


# Alibaba marks unknown endpoints with these placeholders.
_ALIBABA_MISSING = {"", "?", "(?)", "unknown", "unavailable", "nan", "none"}
ALIBABA_DEFAULT_NAMESPACE = "alibaba"


def _text_lines(source: IO[bytes] | IO[str] | bytes | str) -> io.TextIOBase:
    try:
        if isinstance(source, bytes):
            return io.StringIO(source.decode("utf-8"))
        if isinstance(source, str):
            return io.StringIO(source)
        data = source.read()
    except (OSError, ValueError) as exc:
        raise IngestError(f"trace source is not readable: {exc}") from exc
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestError(f"trace source is not UTF-8: {exc}") from exc
    return io.StringIO(data)


def _ref_or_none(value: object) -> ServiceRef | None:
    if value is None:
        return None
    if not isinstance(value, str):
        raise _SkipRow
    try:
        return ServiceRef.parse(value)
    except ValueError:
        raise _SkipRow from None


def _int_field(value: object) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _SkipRow
    return value


def _parse_json_row(line: str) -> SpanRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        raise _SkipRow from None
    if not isinstance(obj, dict):
        raise _SkipRow
    trace_id, span_id = obj.get("trace_id"), obj.get("span_id")
    if not isinstance(trace_id, str) or not isinstance(span_id, str):
        raise _SkipRow
    parent = obj.get("parent_span_id")
    if parent is not None and not isinstance(parent, str):
        raise _SkipRow
    callee = _ref_or_none(obj.get("callee"))
    if callee is None:
        raise _SkipRow
    caller = _ref_or_none(obj.get("caller"))
    start = _int_field(obj.get("start_us"))
    duration = _int_field(obj.get("duration_us"))
    if duration < 0:
        raise _SkipRow
    raw_status = obj.get("status", "Ok")
    if not isinstance(raw_status, str):
        raise _SkipRow
    status = {"ok": SpanStatus.OK, "error": SpanStatus.ERROR}.get(raw_status.lower())
    if status is None:
        raise _SkipRow
    return SpanRecord(trace_id, span_id, parent, caller, callee, start, duration, status)


def _alibaba_ref(value: str | None, namespace: str) -> ServiceRef | None:
    if value is None or value.strip().lower() in _ALIBABA_MISSING:
        return None
    value = value.strip()
    if "/" in value:
        return ServiceRef.parse(value)
    return ServiceRef(namespace, value)


def _parse_alibaba_row(row: Mapping[str, str | None], namespace: str) -> SpanRecord:
    try:
        caller = _alibaba_ref(row.get("um"), namespace)
        callee = _alibaba_ref(row.get("dm"), namespace)
    except ValueError:
        raise _SkipRow from None
    if caller is None or callee is None:
        raise _SkipRow
    trace_id = (row.get("traceid") or "").strip()
    rpc_id = (row.get("rpcid") or row.get("rpc_id") or "").strip()
    if not trace_id or not rpc_id:
        raise _SkipRow
    try:
        ts_ms = float(row.get("timestamp") or "")
        rt_ms = float(row.get("rt") or "0")
    except ValueError:
        raise _SkipRow from None
    if not (math.isfinite(ts_ms) and math.isfinite(rt_ms)):
        raise _SkipRow
    # rt sign encodes request/response side in the published dataset
    duration = int(round(abs(rt_ms) * 1000))
    parent = rpc_id.rsplit(".", 1)[0] if "." in rpc_id else None
    return SpanRecord(trace_id, rpc_id, parent, caller, callee, int(round(ts_ms * 1000)), duration)


def ingest_spans(
    source: IO[bytes] | IO[str] | bytes | str,
    format: TraceFormat | str,
    *,
    namespace: str = ALIBABA_DEFAULT_NAMESPACE,
) -> IngestResult:
    """Parse span rows from ``source``.

    Malformed rows are skipped and counted; self-calls are dropped and
    counted separately. Valid records keep their input order. The result
    unpacks as ``spans, report``.
    """
    fmt = TraceFormat.coerce(format)
    text = _text_lines(source)
    result = IngestResult()
    report = result.report
    seen: set[tuple[str, str]] = set()

    if fmt is TraceFormat.JSON_LINES:
        rows: Iterable = (line for line in text if line.strip())
        parse = _parse_json_row
    else:
        reader = csv.DictReader(text)
        if reader.fieldnames is not None:
            reader.fieldnames = [h.strip().lower() for h in reader.fieldnames]
        rows = reader
        parse = lambda row: _parse_alibaba_row(row, namespace)  # noqa: E731

    for row in rows:
        report.rows_read += 1
        try:
            span = parse(row)
        except _SkipRow:
            report.rows_skipped += 1
            continue
        key = (span.trace_id, span.span_id)
        if key in seen:
            report.rows_skipped += 1
            continue
        if span.caller is not None and span.caller == span.callee:
            report.self_calls_dropped += 1
            continue
        seen.add(key)
        result.spans.append(span)

    if report.rows_skipped:
        logger.info("ingest: skipped %d of %d rows", report.rows_skipped, report.rows_read)
    return result


# -- graph construction and statistics -----------------------------------------


def build_call_graph(spans: Iterable[SpanRecord], window: TimeWindow | None = None) -> CallGraph:
    """Count caller->callee spans whose start time falls in ``window``.

    Spans without a caller contribute their callee as a node only.
    Self-calls (normally removed during ingestion) are ignored.
    """
    window = window if window is not None else TimeWindow.unbounded()
    services: set[ServiceRef] = set()
    edges: dict[tuple[ServiceRef, ServiceRef], int] = {}
    for span in spans:
        if span.start_time not in window:
            continue
        services.add(span.callee)
        if span.caller is None:
            continue
        services.add(span.caller)
        if span.caller == span.callee:
            continue
        key = (span.caller, span.callee)
        edges[key] = edges.get(key, 0) + 1
    return CallGraph(services, edges, window)


def upstream_indices(graph: CallGraph, start: int) -> set[int]:
    """All services with a directed path to ``start`` (excluding it)."""
    pred = graph.predecessor_lists()
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for u in pred[v]:
            if u not in seen:
                seen.add(u)
                queue.append(u)
    seen.discard(start)
    return seen


def blast_radius(graph: CallGraph, service: ServiceRef) -> int:
    """Number of transitive upstream callers of ``service``."""
    return len(upstream_indices(graph, graph.index_of(service)))


@dataclass(frozen=True)
class Connectivity:
    fan_in: int
    fan_out: int


@dataclass(frozen=True)
class ConnectivityReport:
    per_service: Mapping[ServiceRef, Connectivity]
    max_fan_in: tuple[ServiceRef, int] | None
    max_fan_out: tuple[ServiceRef, int] | None

    def top_fan_in(self, k: int) -> list[tuple[ServiceRef, int]]:
        ranked = sorted(self.per_service.items(), key=lambda kv: (-kv[1].fan_in, str(kv[0])))
        return [(s, c.fan_in) for s, c in ranked[:k]]

    def top_fan_out(self, k: int) -> list[tuple[ServiceRef, int]]:
        ranked = sorted(self.per_service.items(), key=lambda kv: (-kv[1].fan_out, str(kv[0])))
        return [(s, c.fan_out) for s, c in ranked[:k]]


def connectivity_stats(graph: CallGraph) -> ConnectivityReport:
    succ, pred = graph.successor_lists(), graph.predecessor_lists()
    per = {
        graph.service_at(i): Connectivity(len(pred[i]), len(succ[i]))
        for i in range(len(graph))
    }
    if not per:
        return ConnectivityReport({}, None, None)
    # ties resolve to the canonically smallest service
    hub_in = min(per, key=lambda s: (-per[s].fan_in, str(s)))
    hub_out = min(per, key=lambda s: (-per[s].fan_out, str(s)))
    return ConnectivityReport(per, (hub_in, per[hub_in].fan_in), (hub_out, per[hub_out].fan_out))


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile; ``p`` in (0, 100]. Empty input gives 0."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[min(rank, len(ordered)) - 1]
