"""Simulated cluster used as the actuation backend and telemetry source."""

from __future__ import annotations

import enum
import random
import threading
import time
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

from ..errors import ConfigError, NotFoundError
from ..isa import (
    Action,
    ActionKind,
    CircuitBreakParams,
    RateLimitParams,
    RollbackConfigParams,
    ScaleParams,
    TrafficState,
)
from ..kernel.microkernel import ApplyResult, BackendUnavailable
from ..recovery_groups import scc_condensation
from ..trace_model import CallGraph, ServiceRef
from .telemetry import SloTelemetry


class FaultKind(enum.Enum):
    POD_FAILURE = "pod_failure"
    NETWORK_PARTITION = "network_partition"
    CPU_STRESS = "cpu_stress"
    MEMORY_STRESS = "memory_stress"
    IO_DELAY = "io_delay"

    @property
    def is_stress(self) -> bool:
        return self in (FaultKind.CPU_STRESS, FaultKind.MEMORY_STRESS)


@dataclass(frozen=True)
class SimConfig:
    """Model parameters. Times are seconds unless the name says otherwise."""

    restart_latency_s: float = 30.0
    action_latency_s: float = 0.1
    initial_replicas: int = 3
    initial_config_version: str = "v1"
    base_error_rate: float = 0.0005
    base_latency_ms: float = 20.0
    latency_spread: float = 0.5
    noise: float = 0.02
    propagation_factor: float = 1.0
    call_timeout_ms: float = 1000.0
    stress_latency_factor: float = 5.0
    stress_error_rate: float = 0.02
    io_delay_ms: float = 200.0
    storm_caller_threshold: int = 20
    storm_base_s: float = 15.0
    storm_per_caller_s: float = 1.0
    storm_error_rate: float = 0.9
    storm_latency_factor: float = 10.0
    storm_spill_error_rate: float = 0.2
    storm_spill_latency_factor: float = 3.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ConfigError(f"{f.name} must be non-negative")
        if not 0 <= self.base_error_rate < 1:
            raise ConfigError("base_error_rate must lie in [0, 1)")

    @classmethod
    def from_json_obj(cls, obj: Mapping[str, Any] | None) -> "SimConfig":
        obj = dict(obj or {})
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown sim config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_json_obj(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class _Svc:
    replicas: int
    traffic: TrafficState = TrafficState.SERVING
    breakers: set[ServiceRef] = field(default_factory=set)
    rate_limit_rps: float | None = None
    config_version: str = "v1"
    fault: FaultKind | None = None
    restart_until: float = float("-inf")
    storm_until: float = float("-inf")


@dataclass(frozen=True)
class ServiceSnapshot:
    replicas: int
    traffic: TrafficState
    breakers: frozenset[ServiceRef]
    rate_limit_rps: float | None
    config_version: str
    fault: FaultKind | None
    restarting: bool
    overloaded: bool

    @property
    def healthy(self) -> bool:
        return self.fault is None and not self.restarting and not self.overloaded and self.replicas > 0

    def config_fields(self) -> tuple:
        """The fields that actions set directly (timers excluded)."""
        return (self.replicas, self.traffic, self.breakers, self.rate_limit_rps, self.config_version)


@dataclass(frozen=True)
class ActionLogEntry:
    start_seq: int
    end_seq: int
    time: float
    action: Action
    token: str
    detail: str = ""


class SimCluster:
    """Per-service state over a fixed topology, driven by ISA actions.

    In virtual mode (the default) time only moves through ``advance_to``
    and ``sleep``. In real-time mode ``now`` follows the wall clock and
    each action blocks for ``action_latency_s`` outside the state lock,
    so actions on different services overlap.
    """

    def __init__(self, topology: CallGraph, config: SimConfig | None = None, *,
                 seed: int = 0, real_time: bool = False) -> None:
        self.topology = topology
        self.config = config or SimConfig()
        self.seed = seed
        self.real_time = real_time
        self._t0 = time.monotonic()
        self._now = 0.0
        self._lock = threading.RLock()
        self._svc = {s: _Svc(self.config.initial_replicas, config_version=self.config.initial_config_version)
                     for s in topology.sorted_services()}
        self.action_log: list[ActionLogEntry] = []
        self.failed_attempts: list[tuple[float, Action, str, str]] = []
        self.duplicate_hits = 0
        self.unreachable = False
        self._tokens: set[str] = set()
        self._forced: dict[tuple[ServiceRef, str | None], int] = {}
        self._seq = 0
        self.telemetry = SloTelemetry(topology.sorted_services())
        self._next_tick = 0
        self._noise = random.Random(seed)
        rng = random.Random(f"latency:{seed}")
        spread = self.config.latency_spread
        self._base_latency = {s: self.config.base_latency_ms * (1 - spread / 2 + spread * rng.random())
                              for s in topology.sorted_services()}
        self._prepare_propagation()

    # -- time -------------------------------------------------------------------

    @property
    def now(self) -> float:
        if self.real_time:
            return time.monotonic() - self._t0
        return self._now

    def sleep(self, seconds: float) -> None:
        if self.real_time:
            time.sleep(seconds)
        else:
            with self._lock:
                self._now += seconds

    def advance_to(self, t: float) -> None:
        """Sample every whole second before ``t``, then set the clock to ``t``."""
        if self.real_time:
            raise RuntimeError("advance_to is only meaningful on the virtual clock")
        with self._lock:
            while self._next_tick < t:
                self._now = max(self._now, float(self._next_tick))
                self.telemetry.append(self._next_tick, self._propagate(float(self._next_tick)))
                self._next_tick += 1
            self._now = max(self._now, float(t))

    # -- state access -------------------------------------------------------------

    def _get(self, ref: ServiceRef) -> _Svc:
        try:
            return self._svc[ref]
        except KeyError:
            raise NotFoundError(f"unknown service {ref}") from None

    def _view(self, s: _Svc, now: float) -> ServiceSnapshot:
        return ServiceSnapshot(
            replicas=s.replicas, traffic=s.traffic, breakers=frozenset(s.breakers),
            rate_limit_rps=s.rate_limit_rps, config_version=s.config_version, fault=s.fault,
            restarting=now < s.restart_until, overloaded=now < s.storm_until,
        )

    def snapshot(self) -> dict[ServiceRef, ServiceSnapshot]:
        with self._lock:
            now = self.now
            return {ref: self._view(s, now) for ref, s in self._svc.items()}

    def service(self, ref: ServiceRef) -> ServiceSnapshot:
        with self._lock:
            return self._view(self._get(ref), self.now)

    def set_replicas(self, ref: ServiceRef, replicas: int) -> None:
        """Out-of-band change (e.g. an operator or autoscaler), not logged."""
        if replicas < 0:
            raise ValueError("replicas must be non-negative")
        with self._lock:
            self._get(ref).replicas = replicas

    def inject_fault(self, kind: FaultKind | str, target: ServiceRef) -> None:
        with self._lock:
            self._get(target).fault = FaultKind(kind)

    def force_failures(self, target: ServiceRef, count: int, kind: ActionKind | None = None) -> None:
        """Make the next ``count`` matching actions on ``target`` fail."""
        with self._lock:
            self._get(target)
            key = (target, None if kind is None else ActionKind(kind).value)
            self._forced[key] = self._forced.get(key, 0) + count

    def tokens(self) -> list[str]:
        with self._lock:
            return [e.token for e in self.action_log]

    # -- actuation ----------------------------------------------------------------

    def _take_forced(self, action: Action) -> bool:
        for key in ((action.target, action.verb), (action.target, None)):
            left = self._forced.get(key, 0)
            if left > 0:
                self._forced[key] = left - 1
                return True
        return False

    def apply(self, action: Action, token: str) -> ApplyResult:
        if self.unreachable:
            raise BackendUnavailable("simulated cluster unreachable")
        with self._lock:
            if token in self._tokens:
                self.duplicate_hits += 1
                return ApplyResult(True, "duplicate token ignored")
            if action.target not in self._svc:
                return ApplyResult(False, f"unknown target {action.target}")
            self._seq += 1
            start = self._seq
        if self.real_time and self.config.action_latency_s:
            time.sleep(self.config.action_latency_s)
        with self._lock:
            now = self.now
            if self._take_forced(action):
                ok, detail = False, "injected failure"
            else:
                ok, detail = self._mutate(action, now)
            self._seq += 1
            if ok:
                self._tokens.add(token)
                self.action_log.append(ActionLogEntry(start, self._seq, now, action, token, detail))
            else:
                self.failed_attempts.append((now, action, token, detail))
            return ApplyResult(ok, detail)

    def _live_callers(self, target: ServiceRef) -> int:
        return sum(1 for c in self.topology.callers(target) if target not in self._svc[c].breakers)

    def _mutate(self, action: Action, now: float) -> tuple[bool, str]:
        s = self._svc[action.target]
        cfg = self.config
        p = action.params
        kind = action.kind
        if kind is ActionKind.RESTART:
            s.fault = None
            s.restart_until = max(s.restart_until, now + cfg.restart_latency_s)
            callers = 0
            if s.traffic is TrafficState.SERVING and s.rate_limit_rps is None:
                callers = self._live_callers(action.target)
            if callers > cfg.storm_caller_threshold:
                extra = callers - cfg.storm_caller_threshold
                s.storm_until = s.restart_until + cfg.storm_base_s + cfg.storm_per_caller_s * extra
                return True, f"restarted; {callers} live callers retry on recovery"
            return True, "restarted"
        if kind is ActionKind.DRAIN:
            s.traffic = TrafficState.DRAINED
            return True, "drained"
        if kind is ActionKind.RESTORE_TRAFFIC:
            s.traffic = TrafficState.SERVING
            return True, "serving"
        if kind is ActionKind.CIRCUIT_BREAK:
            assert isinstance(p, CircuitBreakParams)
            if p.dependency not in self._svc:
                return False, f"unknown dependency {p.dependency}"
            if p.reset:
                s.breakers.discard(p.dependency)
            else:
                s.breakers.add(p.dependency)
            return True, "breaker " + ("reset" if p.reset else "open")
        if kind is ActionKind.RATE_LIMIT:
            assert isinstance(p, RateLimitParams)
            s.rate_limit_rps = p.limit_rps
            return True, "rate limit set" if p.limit_rps is not None else "rate limit removed"
        if kind is ActionKind.SCALE:
            assert isinstance(p, ScaleParams)
            if s.replicas + p.delta < 0:
                return False, f"cannot scale {s.replicas} replicas by {p.delta}"
            s.replicas += p.delta
            return True, f"replicas={s.replicas}"
        if kind is ActionKind.ROLLBACK_CONFIG:
            assert isinstance(p, RollbackConfigParams)
            s.config_version = p.to_version
            return True, f"config={p.to_version}"
        return False, f"unsupported action kind {action.verb}"

    # -- telemetry model ----------------------------------------------------------

    def _prepare_propagation(self) -> None:
        g = self.topology
        cond = scc_condensation(g)
        self._order: list[tuple[ServiceRef, ...]] = [tuple(c) for c in cond.components]
        self._comp_of = dict(cond.component_of)
        self._shares: dict[ServiceRef, list[tuple[ServiceRef, float]]] = {}
        for s in g.sorted_services():
            callees = g.callees(s)
            total = sum(g.weight(s, c) for c in callees)
            self._shares[s] = [(c, g.weight(s, c) / total) for c in callees] if total else []
        # what each service reports when it cannot measure its own path
        self._nominal: dict[ServiceRef, float] = {}
        self._nominal = {ref: lat for ref, (lat, _) in self._model(float("-inf")).items()}

    def _model(self, now: float) -> dict[ServiceRef, tuple[float, float]]:
        """Noise-free (p99 latency ms, error rate) per service."""
        cfg = self.config
        base = cfg.base_error_rate
        status: dict[ServiceRef, tuple[str | None, float, float]] = {}
        # retries from an overloaded service pile onto its own dependencies
        spill = {c for ref, s in self._svc.items() if now < s.storm_until for c in self.topology.callees(ref)}
        for ref, s in self._svc.items():
            lat = self._base_latency[ref]
            err = 0.0
            down = None
            if now < s.restart_until or s.fault is FaultKind.NETWORK_PARTITION:
                down = "timeout"
            elif s.replicas == 0 or s.fault is FaultKind.POD_FAILURE:
                down = "fast"
            else:
                if s.fault is not None and s.fault.is_stress:
                    lat *= cfg.stress_latency_factor
                    err += cfg.stress_error_rate
                if s.fault is FaultKind.IO_DELAY:
                    lat += cfg.io_delay_ms
                if now < s.storm_until:
                    lat *= cfg.storm_latency_factor
                    err += cfg.storm_error_rate
                elif ref in spill:
                    lat *= cfg.storm_spill_latency_factor
                    err += cfg.storm_spill_error_rate
            status[ref] = (down, err, lat)

        # what a caller sees when calling ``c``: (excess error, latency)
        seen: dict[ServiceRef, tuple[float, float]] = {}
        out: dict[ServiceRef, tuple[float, float]] = {}
        k = cfg.propagation_factor

        def combine(ref: ServiceRef, view: Mapping[ServiceRef, tuple[float, float]], only_inside: bool | None):
            down, err, lat = status[ref]
            s = self._svc[ref]
            my_comp = self._comp_of[ref]
            extra_err, extra_lat = 0.0, 0.0
            for c, share in self._shares[ref]:
                inside = self._comp_of[c] == my_comp
                if only_inside is not None and inside != only_inside:
                    continue
                if c in s.breakers or self._svc[c].traffic is TrafficState.DRAINED or c not in view:
                    continue
                x, l = view[c]
                extra_err += share * x * k
                extra_lat = max(extra_lat, l)
            return min(1.0, base + err + extra_err), lat + extra_lat

        def as_seen(ref: ServiceRef, e: float, l: float) -> tuple[float, float]:
            down = status[ref][0]
            if down == "timeout":
                return 1.0 - base, cfg.call_timeout_ms
            if down == "fast":
                return 1.0 - base, self._nominal.get(ref, self._base_latency[ref])
            return max(0.0, e - base), l

        for comp in self._order:
            if len(comp) == 1:
                ref = comp[0]
                e, l = combine(ref, seen, None)
                seen[ref] = as_seen(ref, e, l)
                out[ref] = (e, l)
                continue
            # within a cycle, effects travel one hop per sample to stay bounded
            pre = {}
            for ref in comp:
                e, l = combine(ref, seen, False)
                pre[ref] = as_seen(ref, e, l)
            for ref in comp:
                e0, l0 = combine(ref, seen, False)
                e1, l1 = combine(ref, pre, True)
                e, l = min(1.0, e0 + e1 - base - status[ref][1]), max(l0, l1)
                out[ref] = (e, l)
            for ref in comp:
                seen[ref] = as_seen(ref, *out[ref])

        reported: dict[ServiceRef, tuple[float, float]] = {}
        for ref in self.topology.sorted_services():
            down = status[ref][0]
            if self._svc[ref].traffic is TrafficState.DRAINED:
                reported[ref] = (self._nominal.get(ref, self._base_latency[ref]), base)
            elif down == "timeout":
                reported[ref] = (cfg.call_timeout_ms, 1.0)
            elif down == "fast":
                reported[ref] = (self._nominal.get(ref, self._base_latency[ref]), 1.0)
            else:
                e, l = out[ref]
                reported[ref] = (l, e)
        return reported

    def _propagate(self, now: float) -> dict[ServiceRef, tuple[float, float]]:
        """One telemetry sample per service: (p99 latency ms, error rate)."""
        sample: dict[ServiceRef, tuple[float, float]] = {}
        amp = self.config.noise
        for ref, (l, e) in self._model(now).items():
            l *= 1 + amp * (2 * self._noise.random() - 1)
            e *= 1 + amp * (2 * self._noise.random() - 1)
            sample[ref] = (l, min(1.0, max(0.0, e)))
        return sample

    def sample_now(self) -> dict[ServiceRef, tuple[float, float]]:
        """A telemetry sample at the current time without recording it."""
        with self._lock:
            return self._propagate(self.now)


def clone_cluster(sim: SimCluster, *, real_time: bool | None = None) -> SimCluster:
    """A fresh cluster with the same topology, config and seed."""
    return SimCluster(sim.topology, sim.config, seed=sim.seed,
                      real_time=sim.real_time if real_time is None else real_time)


def state_of(sim: SimCluster) -> dict[ServiceRef, tuple]:
    """Action-controlled state, for equality oracles."""
    return {ref: snap.config_fields() for ref, snap in sim.snapshot().items()}

