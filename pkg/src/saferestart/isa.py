"""Typed remediation actions, effect types and the transaction document format."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from functools import total_ordering
from typing import Any, Callable, Iterable, Mapping, Protocol, Union

from .errors import ConfigError, ContractError, SchemaError
from .trace_model import ServiceRef


class EffectType(enum.Enum):
    RESTARTABLE = "restartable"
    REVERSIBLE = "reversible"
    COMPENSATABLE = "compensatable"
    IRREVERSIBLE = "irreversible"


class ActionKind(str, enum.Enum):
    RESTART = "restart"
    DRAIN = "drain"
    RESTORE_TRAFFIC = "restore_traffic"
    CIRCUIT_BREAK = "circuit_break"
    RATE_LIMIT = "rate_limit"
    SCALE = "scale"
    ROLLBACK_CONFIG = "rollback_config"

    def __str__(self) -> str:
        return self.value


EFFECT_TYPES: Mapping[ActionKind, EffectType] = {
    ActionKind.RESTART: EffectType.RESTARTABLE,
    ActionKind.DRAIN: EffectType.COMPENSATABLE,
    ActionKind.RESTORE_TRAFFIC: EffectType.REVERSIBLE,
    ActionKind.CIRCUIT_BREAK: EffectType.REVERSIBLE,
    ActionKind.RATE_LIMIT: EffectType.REVERSIBLE,
    ActionKind.SCALE: EffectType.REVERSIBLE,
    ActionKind.ROLLBACK_CONFIG: EffectType.COMPENSATABLE,
}


class TrafficState(enum.Enum):
    SERVING = "serving"
    DRAINED = "drained"


class FailurePolicy(enum.Enum):
    ROLLBACK_ALL = "rollback_all"
    COMPENSATE = "compensate"
    ABORT_ONLY = "abort_only"


# -- parameters ----------------------------------------------------------------


@dataclass(frozen=True)
class RestartParams:
    grace_period_ms: int = 0


@dataclass(frozen=True)
class DrainParams:
    pass


@dataclass(frozen=True)
class RestoreTrafficParams:
    pass


@dataclass(frozen=True)
class CircuitBreakParams:
    dependency: ServiceRef
    reset: bool = False  # True resets the breaker to its default (closed)


@dataclass(frozen=True)
class RateLimitParams:
    limit_rps: float | None  # None removes any limit


@dataclass(frozen=True)
class ScaleParams:
    delta: int


@dataclass(frozen=True)
class RollbackConfigParams:
    to_version: str


@dataclass(frozen=True)
class ExtensionParams:
    """Free-form parameters of a registered extension action."""

    values: tuple[tuple[str, Any], ...] = ()

    def as_dict(self) -> dict[str, Any]:
        return dict(self.values)


Params = Union[
    RestartParams, DrainParams, RestoreTrafficParams, CircuitBreakParams,
    RateLimitParams, ScaleParams, RollbackConfigParams, ExtensionParams,
]

_PARAM_TYPES: Mapping[ActionKind, type] = {
    ActionKind.RESTART: RestartParams,
    ActionKind.DRAIN: DrainParams,
    ActionKind.RESTORE_TRAFFIC: RestoreTrafficParams,
    ActionKind.CIRCUIT_BREAK: CircuitBreakParams,
    ActionKind.RATE_LIMIT: RateLimitParams,
    ActionKind.SCALE: ScaleParams,
    ActionKind.ROLLBACK_CONFIG: RollbackConfigParams,
}


@dataclass(frozen=True)
class Action:
    kind: ActionKind | str
    target: ServiceRef
    params: Params
    compensation: "Action | None" = None

    def __post_init__(self) -> None:
        if isinstance(self.kind, ActionKind):
            expected = _PARAM_TYPES[self.kind]
            if not isinstance(self.params, expected):
                raise ValueError(f"{self.kind.value} expects {expected.__name__}")

    @property
    def verb(self) -> str:
        return self.kind.value if isinstance(self.kind, ActionKind) else str(self.kind)

    def describe(self) -> str:
        return f"{self.verb}({self.target})"


# convenience constructors used throughout the planners and tests

def restart(target: ServiceRef, grace_period_ms: int = 0) -> Action:
    return Action(ActionKind.RESTART, target, RestartParams(grace_period_ms))


def drain(target: ServiceRef) -> Action:
    return Action(ActionKind.DRAIN, target, DrainParams(), restore_traffic(target))


def restore_traffic(target: ServiceRef) -> Action:
    return Action(ActionKind.RESTORE_TRAFFIC, target, RestoreTrafficParams())


def circuit_break(target: ServiceRef, dependency: ServiceRef, reset: bool = False) -> Action:
    return Action(ActionKind.CIRCUIT_BREAK, target, CircuitBreakParams(dependency, reset))


def rate_limit(target: ServiceRef, limit_rps: float | None) -> Action:
    return Action(ActionKind.RATE_LIMIT, target,
                  RateLimitParams(None if limit_rps is None else float(limit_rps)))


def scale(target: ServiceRef, delta: int) -> Action:
    return Action(ActionKind.SCALE, target, ScaleParams(delta))


def rollback_config(target: ServiceRef, to_version: str, previous_version: str) -> Action:
    return Action(
        ActionKind.ROLLBACK_CONFIG, target, RollbackConfigParams(to_version),
        Action(ActionKind.ROLLBACK_CONFIG, target, RollbackConfigParams(previous_version)),
    )


# -- conflict keys and preconditions ---------------------------------------------


class Granularity(enum.Enum):
    CLUSTER = "cluster"
    NAMESPACE = "namespace"
    SERVICE = "service"

    @property
    def rank(self) -> int:
        return {"cluster": 0, "namespace": 1, "service": 2}[self.value]


@total_ordering
@dataclass(frozen=True)
class ConflictKey:
    granularity: Granularity
    ref: ServiceRef | str | None = None

    def __post_init__(self) -> None:
        g = self.granularity
        if g is Granularity.SERVICE and not isinstance(self.ref, ServiceRef):
            raise ValueError("service conflict key needs a ServiceRef")
        if g is Granularity.NAMESPACE and (not isinstance(self.ref, str) or not self.ref):
            raise ValueError("namespace conflict key needs a namespace string")
        if g is Granularity.CLUSTER and self.ref is not None:
            raise ValueError("cluster conflict key takes no reference")

    @classmethod
    def service(cls, ref: ServiceRef) -> "ConflictKey":
        return cls(Granularity.SERVICE, ref)

    @classmethod
    def namespace(cls, ns: str) -> "ConflictKey":
        return cls(Granularity.NAMESPACE, ns)

    @classmethod
    def cluster(cls) -> "ConflictKey":
        return cls(Granularity.CLUSTER)

    @property
    def sort_key(self) -> tuple[int, str]:
        return (self.granularity.rank, "" if self.ref is None else str(self.ref))

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, ConflictKey):
            return NotImplemented
        return self.sort_key < other.sort_key

    @property
    def resource(self) -> str:
        ref = "*" if self.ref is None else str(self.ref)
        return f"{self.granularity.value}/{ref}"

    def covers(self, service: ServiceRef) -> bool:
        if self.granularity is Granularity.CLUSTER:
            return True
        if self.granularity is Granularity.NAMESPACE:
            return service.namespace == self.ref
        return service == self.ref

    def overlaps(self, other: "ConflictKey") -> bool:
        a, b = sorted((self, other))
        if a.granularity is Granularity.CLUSTER:
            return True
        if a.granularity is Granularity.NAMESPACE:
            if b.granularity is Granularity.NAMESPACE:
                return a.ref == b.ref
            return b.ref.namespace == a.ref
        return a.ref == b.ref

    def to_json_obj(self) -> dict:
        obj: dict[str, Any] = {"granularity": self.granularity.value}
        if self.ref is not None:
            obj["ref"] = str(self.ref)
        return obj


class PreconditionKind(enum.Enum):
    SERVICE_EXISTS = "service_exists"
    REPLICA_COUNT_AT_LEAST = "replica_count_at_least"
    SERVICE_HEALTHY = "service_healthy"
    TRAFFIC_STATE = "traffic_state"


@dataclass(frozen=True)
class Precondition:
    kind: PreconditionKind
    service: ServiceRef
    count: int | None = None
    traffic: TrafficState | None = None

    def describe(self) -> str:
        if self.kind is PreconditionKind.REPLICA_COUNT_AT_LEAST:
            return f"{self.kind.value}({self.service}, {self.count})"
        if self.kind is PreconditionKind.TRAFFIC_STATE:
            return f"{self.kind.value}({self.service}, {self.traffic.value})"
        return f"{self.kind.value}({self.service})"

    def to_json_obj(self) -> dict:
        obj: dict[str, Any] = {"kind": self.kind.value, "service": str(self.service)}
        if self.count is not None:
            obj["n"] = self.count
        if self.traffic is not None:
            obj["state"] = self.traffic.value
        return obj


class ServiceView(Protocol):
    replicas: int
    traffic: TrafficState

    @property
    def healthy(self) -> bool: ...


def evaluate_precondition(pre: Precondition, snapshot: Mapping[ServiceRef, ServiceView]) -> bool:
    """Decide a precondition against a point-in-time cluster snapshot."""
    state = snapshot.get(pre.service)
    if pre.kind is PreconditionKind.SERVICE_EXISTS:
        return state is not None
    if state is None:
        return False
    if pre.kind is PreconditionKind.REPLICA_COUNT_AT_LEAST:
        return state.replicas >= pre.count
    if pre.kind is PreconditionKind.SERVICE_HEALTHY:
        return state.healthy
    return state.traffic is pre.traffic


# -- extension registry ----------------------------------------------------------


@dataclass(frozen=True)
class ActionExtension:
    """A domain-specific action added on top of the seven built-ins.

    Registration needs the effect type, the undo logic (``inverse`` for
    reversible actions; compensating actions are supplied per transaction
    for compensatable ones) and the conflict keys the action locks.
    """

    name: str
    effect_type: EffectType
    conflict_keys: Callable[[Action], Iterable[ConflictKey]]
    inverse: Callable[[Action], Action] | None = None
    validate_params: Callable[[Mapping[str, Any]], None] | None = None


class IsaRegistry:
    def __init__(self) -> None:
        self._extensions: dict[str, ActionExtension] = {}

    def register(self, ext: ActionExtension) -> None:
        if ext.name in ActionKind._value2member_map_:
            raise ConfigError(f"{ext.name!r} collides with a built-in action")
        if not ext.name or not ext.name.replace("_", "").isalnum():
            raise ConfigError(f"invalid extension name {ext.name!r}")
        if not isinstance(ext.effect_type, EffectType):
            raise ConfigError("extension needs an effect-type annotation")
        if ext.effect_type is EffectType.REVERSIBLE and ext.inverse is None:
            raise ConfigError("reversible extension needs inverse logic")
        if ext.conflict_keys is None:
            raise ConfigError("extension needs a conflict-key function")
        self._extensions[ext.name] = ext

    def get(self, name: str) -> ActionExtension | None:
        return self._extensions.get(name)

    def kinds(self) -> list[str]:
        return [k.value for k in ActionKind] + sorted(self._extensions)


DEFAULT_REGISTRY = IsaRegistry()


def effect_type_of(kind: ActionKind | str, registry: IsaRegistry | None = None) -> EffectType:
    if isinstance(kind, ActionKind):
        return EFFECT_TYPES[kind]
    if kind in ActionKind._value2member_map_:
        return EFFECT_TYPES[ActionKind(kind)]
    ext = (registry or DEFAULT_REGISTRY).get(kind)
    if ext is None:
        raise SchemaError("kind", f"unknown action kind {kind!r}")
    return ext.effect_type


def required_keys(action: Action, registry: IsaRegistry | None = None) -> list[ConflictKey]:
    if isinstance(action.kind, ActionKind):
        return [ConflictKey.service(action.target)]
    ext = (registry or DEFAULT_REGISTRY).get(action.kind)
    if ext is None:
        raise SchemaError("kind", f"unknown action kind {action.kind!r}")
    return list(ext.conflict_keys(action)) or [ConflictKey.service(action.target)]


def inverse_of(action: Action, registry: IsaRegistry | None = None) -> Action:
    """Mechanical inverse of a reversible action.

    The inverses are state-free: a rate limit is undone by removing the
    limit and a circuit breaker by resetting it, regardless of what was
    configured before the forward action ran.
    """
    effect = effect_type_of(action.kind, registry)
    if effect is not EffectType.REVERSIBLE:
        raise ContractError(f"{action.verb} is {effect.value}, not reversible")
    p = action.params
    if action.kind is ActionKind.SCALE:
        return Action(ActionKind.SCALE, action.target, ScaleParams(-p.delta))
    if action.kind is ActionKind.RATE_LIMIT:
        if p.limit_rps is None:
            raise ContractError("removing a rate limit has no mechanical inverse")
        return Action(ActionKind.RATE_LIMIT, action.target, RateLimitParams(None))
    if action.kind is ActionKind.CIRCUIT_BREAK:
        return Action(ActionKind.CIRCUIT_BREAK, action.target,
                      CircuitBreakParams(p.dependency, not p.reset))
    if action.kind is ActionKind.RESTORE_TRAFFIC:
        return drain(action.target)
    ext = (registry or DEFAULT_REGISTRY).get(action.kind)
    return ext.inverse(action)


# -- transactions --------------------------------------------------------------


@dataclass(frozen=True)
class RemediationTransaction:
    txn_id: str
    actions: tuple[Action, ...]
    conflict_keys: frozenset[ConflictKey]
    preconditions: tuple[Precondition, ...] = ()
    failure_policy: FailurePolicy = FailurePolicy.ROLLBACK_ALL

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "conflict_keys", frozenset(self.conflict_keys))
        object.__setattr__(self, "preconditions", tuple(self.preconditions))

    @property
    def targets(self) -> list[ServiceRef]:
        return [a.target for a in self.actions]

    @property
    def namespaces(self) -> set[str]:
        return {a.target.namespace for a in self.actions}

    def sorted_keys(self) -> list[ConflictKey]:
        return sorted(self.conflict_keys)

    def to_json_obj(self) -> dict:
        return {
            "txn_id": self.txn_id,
            "actions": [_action_to_obj(a) for a in self.actions],
            "conflict_keys": [k.to_json_obj() for k in self.sorted_keys()],
            "preconditions": [p.to_json_obj() for p in self.preconditions],
            "failure_policy": self.failure_policy.value,
        }


def transaction_for(
    txn_id: str,
    actions: Iterable[Action],
    *,
    preconditions: Iterable[Precondition] = (),
    failure_policy: FailurePolicy = FailurePolicy.ROLLBACK_ALL,
    keys: Iterable[ConflictKey] | None = None,
) -> RemediationTransaction:
    """Build a transaction, defaulting to one service key per target."""
    actions = tuple(actions)
    if keys is None:
        keys = {ConflictKey.service(a.target) for a in actions}
    return RemediationTransaction(txn_id, actions, frozenset(keys), tuple(preconditions), failure_policy)


def _params_to_obj(action: Action) -> dict:
    p = action.params
    if isinstance(p, RestartParams):
        return {"grace_period_ms": p.grace_period_ms}
    if isinstance(p, CircuitBreakParams):
        obj: dict[str, Any] = {"dependency": str(p.dependency)}
        if p.reset:
            obj["reset"] = True
        return obj
    if isinstance(p, RateLimitParams):
        return {"limit_rps": p.limit_rps}
    if isinstance(p, ScaleParams):
        return {"delta": p.delta}
    if isinstance(p, RollbackConfigParams):
        return {"to_version": p.to_version}
    if isinstance(p, ExtensionParams):
        return p.as_dict()
    return {}


def _action_to_obj(action: Action) -> dict:
    obj: dict[str, Any] = {
        "kind": action.verb,
        "target": str(action.target),
        "params": _params_to_obj(action),
    }
    if action.compensation is not None:
        obj["compensation"] = _action_to_obj(action.compensation)
    return obj


def serialize_transaction(txn: RemediationTransaction, **kwargs) -> str:
    return json.dumps(txn.to_json_obj(), **kwargs)


# -- parsing -------------------------------------------------------------------


def _expect_obj(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaError(path, "expected an object")
    return value


def _expect_keys(obj: dict, path: str, required: set[str], optional: set[str] = frozenset()) -> None:
    for key in sorted(required):
        if key not in obj:
            raise SchemaError(f"{path}.{key}" if path else key, "missing required field")
    extra = set(obj) - required - set(optional)
    if extra:
        first = sorted(extra)[0]
        raise SchemaError(f"{path}.{first}" if path else first, "unknown field")


def _service(value: Any, path: str) -> ServiceRef:
    try:
        return ServiceRef.parse(value)
    except ValueError as exc:
        raise SchemaError(path, str(exc)) from None


def _int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, "expected an integer")
    return value


def _parse_params(kind: ActionKind, raw: Any, path: str) -> Params:
    obj = _expect_obj(raw if raw is not None else {}, path)
    if kind is ActionKind.RESTART:
        _expect_keys(obj, path, set(), {"grace_period_ms"})
        grace = _int(obj.get("grace_period_ms", 0), f"{path}.grace_period_ms")
        if grace < 0:
            raise SchemaError(f"{path}.grace_period_ms", "must be >= 0")
        return RestartParams(grace)
    if kind in (ActionKind.DRAIN, ActionKind.RESTORE_TRAFFIC):
        _expect_keys(obj, path, set())
        return DrainParams() if kind is ActionKind.DRAIN else RestoreTrafficParams()
    if kind is ActionKind.CIRCUIT_BREAK:
        _expect_keys(obj, path, {"dependency"}, {"reset"})
        reset = obj.get("reset", False)
        if not isinstance(reset, bool):
            raise SchemaError(f"{path}.reset", "expected a boolean")
        return CircuitBreakParams(_service(obj["dependency"], f"{path}.dependency"), reset)
    if kind is ActionKind.RATE_LIMIT:
        _expect_keys(obj, path, {"limit_rps"})
        limit = obj["limit_rps"]
        if limit is None:
            return RateLimitParams(None)
        if isinstance(limit, bool) or not isinstance(limit, (int, float)) or not math.isfinite(limit) or limit <= 0:
            raise SchemaError(f"{path}.limit_rps", "must be a positive number or null")
        return RateLimitParams(float(limit))
    if kind is ActionKind.SCALE:
        _expect_keys(obj, path, {"delta"})
        delta = _int(obj["delta"], f"{path}.delta")
        if delta == 0:
            raise SchemaError(f"{path}.delta", "must be non-zero")
        return ScaleParams(delta)
    _expect_keys(obj, path, {"to_version"})
    version = obj["to_version"]
    if not isinstance(version, str) or not version:
        raise SchemaError(f"{path}.to_version", "expected a non-empty string")
    return RollbackConfigParams(version)


def _parse_action(raw: Any, path: str, registry: IsaRegistry, nested: bool = False) -> Action:
    obj = _expect_obj(raw, path)
    _expect_keys(obj, path, {"kind", "target"}, {"params"} | (set() if nested else {"compensation"}))
    kind_raw = obj["kind"]
    if not isinstance(kind_raw, str):
        raise SchemaError(f"{path}.kind", "expected a string")
    target = _service(obj["target"], f"{path}.target")
    if kind_raw in ActionKind._value2member_map_:
        kind: ActionKind | str = ActionKind(kind_raw)
        params = _parse_params(kind, obj.get("params"), f"{path}.params")
        effect = EFFECT_TYPES[kind]
    else:
        ext = registry.get(kind_raw)
        if ext is None:
            raise SchemaError(f"{path}.kind", f"unknown action kind {kind_raw!r}")
        kind = kind_raw
        raw_params = _expect_obj(obj.get("params") or {}, f"{path}.params")
        if ext.validate_params is not None:
            try:
                ext.validate_params(raw_params)
            except (ValueError, TypeError) as exc:
                raise SchemaError(f"{path}.params", str(exc)) from None
        params = ExtensionParams(tuple(sorted(raw_params.items())))
        effect = ext.effect_type

    comp_raw = obj.get("compensation")
    compensation = None
    if comp_raw is not None:
        if effect is not EffectType.COMPENSATABLE:
            raise SchemaError(f"{path}.compensation", f"{effect.value} action must not carry a compensation")
        compensation = _parse_action(comp_raw, f"{path}.compensation", registry, nested=True)
    elif effect is EffectType.COMPENSATABLE and not nested:
        raise SchemaError(f"{path}.compensation", f"compensatable action {kind_raw!r} requires a compensation")

    if compensation is not None:
        if compensation.target != target:
            raise SchemaError(f"{path}.compensation.target", "compensation must target the same service")
        if kind is ActionKind.DRAIN and compensation.kind is not ActionKind.RESTORE_TRAFFIC:
            raise SchemaError(f"{path}.compensation.kind", "drain must be compensated by restore_traffic")
        if kind is ActionKind.ROLLBACK_CONFIG and compensation.kind is not ActionKind.ROLLBACK_CONFIG:
            raise SchemaError(f"{path}.compensation.kind",
                              "rollback_config must be compensated by rollback_config to the prior version")
    return Action(kind, target, params, compensation)


def _parse_key(raw: Any, path: str) -> ConflictKey:
    obj = _expect_obj(raw, path)
    g_raw = obj.get("granularity")
    try:
        g = Granularity(g_raw)
    except ValueError:
        raise SchemaError(f"{path}.granularity", f"unknown granularity {g_raw!r}") from None
    if g is Granularity.CLUSTER:
        _expect_keys(obj, path, {"granularity"})
        return ConflictKey.cluster()
    _expect_keys(obj, path, {"granularity", "ref"})
    if g is Granularity.NAMESPACE:
        ns = obj["ref"]
        if not isinstance(ns, str) or not ns or "/" in ns:
            raise SchemaError(f"{path}.ref", "expected a namespace name")
        return ConflictKey.namespace(ns)
    return ConflictKey.service(_service(obj["ref"], f"{path}.ref"))


def _parse_precondition(raw: Any, path: str) -> Precondition:
    obj = _expect_obj(raw, path)
    try:
        kind = PreconditionKind(obj.get("kind"))
    except ValueError:
        raise SchemaError(f"{path}.kind", f"unknown precondition {obj.get('kind')!r}") from None
    if kind is PreconditionKind.REPLICA_COUNT_AT_LEAST:
        _expect_keys(obj, path, {"kind", "service", "n"})
        n = _int(obj["n"], f"{path}.n")
        if n < 0:
            raise SchemaError(f"{path}.n", "must be >= 0")
        return Precondition(kind, _service(obj["service"], f"{path}.service"), count=n)
    if kind is PreconditionKind.TRAFFIC_STATE:
        _expect_keys(obj, path, {"kind", "service", "state"})
        try:
            state = TrafficState(obj["state"])
        except ValueError:
            raise SchemaError(f"{path}.state", f"unknown traffic state {obj['state']!r}") from None
        return Precondition(kind, _service(obj["service"], f"{path}.service"), traffic=state)
    _expect_keys(obj, path, {"kind", "service"})
    return Precondition(kind, _service(obj["service"], f"{path}.service"))


def parse_transaction(document: str | bytes | Mapping, registry: IsaRegistry | None = None) -> RemediationTransaction:
    """Parse and schema-check a JSON remediation transaction.

    Raises SchemaError naming the first violated field.
    """
    registry = registry or DEFAULT_REGISTRY
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("", f"not valid JSON: {exc.msg}") from None
    obj = _expect_obj(document, "")
    _expect_keys(obj, "", {"txn_id", "actions", "conflict_keys", "failure_policy"}, {"preconditions"})

    txn_id = obj["txn_id"]
    if not isinstance(txn_id, str) or not txn_id:
        raise SchemaError("txn_id", "expected a non-empty string")
    raw_actions = obj["actions"]
    if not isinstance(raw_actions, list):
        raise SchemaError("actions", "expected a list")
    if not raw_actions:
        raise SchemaError("actions", "transaction must contain at least one action")
    actions = tuple(_parse_action(a, f"actions[{i}]", registry) for i, a in enumerate(raw_actions))

    raw_keys = obj["conflict_keys"]
    if not isinstance(raw_keys, list) or not raw_keys:
        raise SchemaError("conflict_keys", "expected a non-empty list")
    keys = frozenset(_parse_key(k, f"conflict_keys[{i}]") for i, k in enumerate(raw_keys))

    raw_pre = obj.get("preconditions", [])
    if not isinstance(raw_pre, list):
        raise SchemaError("preconditions", "expected a list")
    pres = tuple(_parse_precondition(p, f"preconditions[{i}]") for i, p in enumerate(raw_pre))

    try:
        policy = FailurePolicy(obj["failure_policy"])
    except ValueError:
        raise SchemaError("failure_policy", f"unknown failure policy {obj['failure_policy']!r}") from None

    for i, action in enumerate(actions):
        for needed in required_keys(action, registry):
            covered = any(k == needed or (k.overlaps(needed) and k <= needed) for k in keys)
            if not covered:
                raise SchemaError(f"actions[{i}].target",
                                  f"not covered by any conflict key (needs {needed.resource})")
    return RemediationTransaction(txn_id, actions, keys, pres, policy)
