"""Conflict-key locks with deterministic acquisition order.

Keys form a hierarchy (cluster > namespace > service). Locking a key
takes it exclusively and takes intention locks on its ancestors, so a
namespace lock excludes every service lock in that namespace while two
service locks in one namespace stay compatible. All lock nodes are
acquired in ConflictKey order, which rules out wait-for cycles.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Iterable

from ..isa import ConflictKey, Granularity


class LockMode(enum.Enum):
    INTENTION = "IX"
    EXCLUSIVE = "X"


def _compatible(a: LockMode, b: LockMode) -> bool:
    return a is LockMode.INTENTION and b is LockMode.INTENTION


def lock_plan(keys: Iterable[ConflictKey]) -> list[tuple[ConflictKey, LockMode]]:
    """Nodes to lock, with modes, in acquisition order."""
    modes: dict[ConflictKey, LockMode] = {}

    def want(node: ConflictKey, mode: LockMode) -> None:
        if modes.get(node) is not LockMode.EXCLUSIVE:
            modes[node] = mode

    for key in keys:
        if key.granularity is not Granularity.CLUSTER:
            want(ConflictKey.cluster(), LockMode.INTENTION)
        if key.granularity is Granularity.SERVICE:
            want(ConflictKey.namespace(key.ref.namespace), LockMode.INTENTION)
        want(key, LockMode.EXCLUSIVE)
    return sorted(modes.items(), key=lambda kv: kv[0].sort_key)


@dataclass
class LockHandle:
    owner: str
    keys: frozenset[ConflictKey]
    nodes: list[tuple[ConflictKey, LockMode]] = field(default_factory=list)
    released: bool = False


class LockRegistry:
    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._held: dict[ConflictKey, dict[str, LockMode]] = {}

    def _grantable(self, node: ConflictKey, mode: LockMode, owner: str) -> bool:
        holders = self._held.get(node, {})
        return all(o == owner or _compatible(m, mode) for o, m in holders.items())

    def acquire(self, keys: Iterable[ConflictKey], owner: str, timeout: float | None = None) -> LockHandle:
        """Block until every key is held by ``owner``.

        With a timeout, raises TimeoutError after releasing any nodes
        already taken.
        """
        keys = frozenset(keys)
        handle = LockHandle(owner, keys)
        with self._cond:
            for node, mode in lock_plan(keys):
                ok = self._cond.wait_for(lambda: self._grantable(node, mode, owner), timeout)
                if not ok:
                    self._release_nodes(handle)
                    raise TimeoutError(f"{owner}: timed out waiting for {node.resource}")
                holders = self._held.setdefault(node, {})
                if holders.get(owner) is not LockMode.EXCLUSIVE:
                    holders[owner] = mode
                handle.nodes.append((node, mode))
        return handle

    def _release_nodes(self, handle: LockHandle) -> None:
        for node, _ in handle.nodes:
            holders = self._held.get(node)
            if holders is not None:
                holders.pop(handle.owner, None)
                if not holders:
                    del self._held[node]
        handle.nodes.clear()
        self._cond.notify_all()

    def release(self, handle: LockHandle) -> None:
        with self._cond:
            if not handle.released:
                self._release_nodes(handle)
                handle.released = True

    def holders(self) -> dict[ConflictKey, dict[str, LockMode]]:
        with self._cond:
            return {k: dict(v) for k, v in self._held.items()}


def acquire_locks(keys: Iterable[ConflictKey], registry: LockRegistry, owner: str) -> LockHandle:
    return registry.acquire(keys, owner)
