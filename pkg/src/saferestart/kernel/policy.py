"""Admission checks: capabilities, scope, effect types, conflicts and rate limits."""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterable

from ..errors import ConfigError
from ..isa import (
    ActionKind,
    EffectType,
    IsaRegistry,
    RemediationTransaction,
    effect_type_of,
)
from ..recovery_groups import RecoveryGroup
from ..trace_model import ServiceRef
from .feedback import RejectionFeedback


@dataclass(frozen=True)
class Grant:
    """Permission (or denial) for ``verb`` on targets matching ``pattern``.

    Patterns: ``ns/name`` (exact), ``ns/*`` (namespace) or ``*`` (cluster).
    """

    verb: str
    pattern: str
    allow: bool = True

    def __post_init__(self) -> None:
        if self.pattern != "*":
            ns, sep, name = self.pattern.partition("/")
            if not sep or not ns or not name:
                raise ConfigError(f"bad grant pattern {self.pattern!r}")

    @classmethod
    def parse(cls, text: str) -> "Grant":
        allow = not text.startswith("!")
        verb, sep, pattern = text.lstrip("!").partition(":")
        if not sep:
            raise ConfigError(f"grant {text!r} is not of the form verb:pattern")
        return cls(verb, pattern, allow)

    def specificity(self, target: ServiceRef) -> int | None:
        """How specifically this grant matches ``target`` (None = no match)."""
        if self.pattern == "*":
            return 0
        ns, _, name = self.pattern.partition("/")
        if ns != target.namespace:
            return None
        if name == "*":
            return 1
        return 2 if name == target.name else None


@dataclass(frozen=True)
class CapabilitySet:
    grants: frozenset[Grant] = frozenset()

    @classmethod
    def of(cls, *grants: str | Grant) -> "CapabilitySet":
        return cls(frozenset(g if isinstance(g, Grant) else Grant.parse(g) for g in grants))

    @classmethod
    def allow_all(cls, pattern: str = "*") -> "CapabilitySet":
        return cls(frozenset(Grant(k.value, pattern) for k in ActionKind))

    def permits(self, verb: str, target: ServiceRef) -> bool:
        best: tuple[int, int] | None = None
        verdict = False
        for g in self.grants:
            if g.verb not in (verb, "*"):
                continue
            spec = g.specificity(target)
            if spec is None:
                continue
            # exact verb beats wildcard verb at equal pattern specificity;
            # at a full tie a denial wins
            rank = (spec, 1 if g.verb == verb else 0)
            if best is None or rank > best:
                best, verdict = rank, g.allow
            elif rank == best and not g.allow:
                verdict = False
        return verdict


@dataclass(frozen=True)
class KernelPolicy:
    rate_limit: int = 10
    window_s: float = 60.0
    break_glass_enabled: bool = False

    def __post_init__(self) -> None:
        if self.rate_limit <= 0:
            raise ConfigError("rate_limit must be positive")
        if self.window_s <= 0:
            raise ConfigError("window_s must be positive")


class RateWindow:
    """Sliding-window admission history per namespace (thread-safe)."""

    def __init__(self, window_s: float = 60.0) -> None:
        self.window_s = window_s
        self._events: dict[str, deque[float]] = {}
        self._lock = threading.Lock()

    def count(self, namespace: str, now: float) -> int:
        with self._lock:
            q = self._events.get(namespace)
            if not q:
                return 0
            return sum(1 for t in q if now - self.window_s < t <= now)

    def record(self, namespaces: Iterable[str], now: float) -> None:
        with self._lock:
            for ns in namespaces:
                q = self._events.setdefault(ns, deque())
                q.append(now)
                while q and q[0] <= now - self.window_s:
                    q.popleft()


@dataclass(frozen=True)
class Verdict:
    feedback: RejectionFeedback | None = None

    @property
    def accepted(self) -> bool:
        return self.feedback is None

    def __bool__(self) -> bool:
        return self.accepted

    @classmethod
    def accept(cls) -> "Verdict":
        return cls(None)


def validate(
    txn: RemediationTransaction,
    scope: RecoveryGroup,
    caps: CapabilitySet,
    policy: KernelPolicy,
    active: Iterable[RemediationTransaction] = (),
    *,
    rate_window: RateWindow | None = None,
    now: float = 0.0,
    registry: IsaRegistry | None = None,
    pending: dict[str, int] | None = None,
) -> Verdict:
    """Run the admission checks in fixed order; the first failure wins.

    Order: capability, scope, effect type, conflict, rate limit. Pure:
    nothing passed in is mutated.
    """
    for action in txn.actions:
        if not caps.permits(action.verb, action.target):
            return Verdict(RejectionFeedback.missing_capability(action.verb, action.target))

    for action in txn.actions:
        if action.target not in scope:
            return Verdict(RejectionFeedback.out_of_scope(action.target))

    if not policy.break_glass_enabled:
        for action in txn.actions:
            if effect_type_of(action.kind, registry) is EffectType.IRREVERSIBLE:
                return Verdict(RejectionFeedback.irreversible_effect(action.verb))

    others = sorted(active, key=lambda t: t.txn_id)
    for key in txn.sorted_keys():
        for other in others:
            for held in other.sorted_keys():
                if key.overlaps(held):
                    return Verdict(RejectionFeedback.conflict(held, other.txn_id))

    if rate_window is not None:
        pending = pending or {}
        for ns in sorted(txn.namespaces):
            if rate_window.count(ns, now) + pending.get(ns, 0) >= policy.rate_limit:
                return Verdict(RejectionFeedback.rate_limited(ns, policy.rate_limit, policy.window_s))
    return Verdict.accept()
