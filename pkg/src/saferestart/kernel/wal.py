"""Write-ahead journal of transaction start, action completion and outcome.

On disk the journal is JSON Lines with ``seq`` strictly increasing from 1.
An entry is durable once ``append`` returns. A torn final record is
truncated on open; damage anywhere before it is fatal.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from ..errors import WalCorruptionError

logger = logging.getLogger(__name__)


class WalKind(enum.Enum):
    TXN_START = "txn_start"
    ACTION_COMPLETE = "action_complete"
    ROLLBACK_START = "rollback_start"
    OUTCOME = "outcome"


class Outcome(enum.Enum):
    COMMITTED = "committed"
    ROLLED_BACK = "rolled_back"
    ABORTED = "aborted"
    COMPENSATION_FAILED = "compensation_failed"


@dataclass(frozen=True)
class WalEntry:
    seq: int
    kind: WalKind
    txn_id: str
    transaction: dict | None = None
    action_index: int | None = None
    token: str | None = None
    outcome: Outcome | None = None

    def to_json_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"seq": self.seq, "kind": self.kind.value, "txn_id": self.txn_id}
        if self.kind is WalKind.TXN_START:
            obj["transaction"] = self.transaction
        elif self.kind is WalKind.ACTION_COMPLETE:
            obj["action_index"] = self.action_index
            obj["token"] = self.token
        elif self.kind is WalKind.ROLLBACK_START:
            obj["action_index"] = self.action_index
        else:
            obj["outcome"] = self.outcome.value
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "WalEntry":
        kind = WalKind(obj["kind"])
        seq, txn_id = obj["seq"], obj["txn_id"]
        if not isinstance(seq, int) or isinstance(seq, bool) or not isinstance(txn_id, str):
            raise ValueError("bad seq or txn_id")
        if kind is WalKind.TXN_START:
            if not isinstance(obj["transaction"], dict):
                raise ValueError("txn_start without transaction document")
            return cls(seq, kind, txn_id, transaction=obj["transaction"])
        if kind is WalKind.ACTION_COMPLETE:
            return cls(seq, kind, txn_id, action_index=int(obj["action_index"]), token=str(obj["token"]))
        if kind is WalKind.ROLLBACK_START:
            idx = obj.get("action_index")
            return cls(seq, kind, txn_id, action_index=None if idx is None else int(idx))
        return cls(seq, kind, txn_id, outcome=Outcome(obj["outcome"]))


class Journal:
    """In-memory journal; base class for the durable file journal."""

    def __init__(self, entries: Iterable[WalEntry] = ()) -> None:
        self._entries: list[WalEntry] = list(entries)
        self._lock = threading.Lock()

    def entries(self) -> list[WalEntry]:
        with self._lock:
            return list(self._entries)

    def _persist(self, entry: WalEntry) -> None:
        pass

    def append(
        self,
        kind: WalKind,
        txn_id: str,
        *,
        transaction: dict | None = None,
        action_index: int | None = None,
        token: str | None = None,
        outcome: Outcome | None = None,
    ) -> WalEntry:
        with self._lock:
            seq = self._entries[-1].seq + 1 if self._entries else 1
            entry = WalEntry(seq, kind, txn_id, transaction, action_index, token, outcome)
            self._persist(entry)
            self._entries.append(entry)
            return entry

    def close(self) -> None:
        pass


class FileJournal(Journal):
    def __init__(self, path: str | os.PathLike, *, fsync: bool = True) -> None:
        self.path = Path(path)
        self.fsync = fsync
        entries = load_wal(self.path, repair=True) if self.path.exists() else []
        super().__init__(entries)
        self._fh = open(self.path, "ab")

    def _persist(self, entry: WalEntry) -> None:
        line = json.dumps(entry.to_json_obj(), sort_keys=True, separators=(",", ":")) + "\n"
        self._fh.write(line.encode("utf-8"))
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "FileJournal":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def load_wal(path: str | os.PathLike, *, repair: bool = False) -> list[WalEntry]:
    """Read a WAL file.

    A damaged final record is dropped (and cut from the file when
    ``repair`` is set). Damage before the final record raises
    WalCorruptionError.
    """
    path = Path(path)
    data = path.read_bytes()
    entries: list[WalEntry] = []
    offset = 0
    good_end = 0
    lines = data.split(b"\n")
    # the element after the final newline is empty for a clean file
    for i, raw in enumerate(lines):
        is_last = i == len(lines) - 1
        line_end = offset + len(raw) + (0 if is_last else 1)
        if is_last and raw == b"":
            break
        try:
            if is_last:
                raise ValueError("record not newline-terminated")
            entry = WalEntry.from_json_obj(json.loads(raw.decode("utf-8")))
            expected = entries[-1].seq + 1 if entries else 1
            if entry.seq != expected:
                raise ValueError(f"seq {entry.seq} where {expected} was expected")
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            remaining = [r for r in lines[i + 1:] if r.strip()]
            if remaining:
                raise WalCorruptionError(f"{path}: corrupt record at byte {offset}: {exc}") from exc
            logger.warning("%s: dropping torn tail record at byte %d (%s)", path, offset, exc)
            if repair:
                with open(path, "r+b") as fh:
                    fh.truncate(good_end)
            break
        entries.append(entry)
        offset = line_end
        good_end = line_end
    return entries


@dataclass
class TxnHistory:
    txn_id: str
    start: WalEntry | None = None
    completed: list[WalEntry] | None = None
    rollback_started: bool = False
    outcome: Outcome | None = None


def txn_histories(entries: Iterable[WalEntry]) -> dict[str, TxnHistory]:
    """Group entries per transaction, preserving TxnStart order."""
    out: dict[str, TxnHistory] = {}
    for e in entries:
        h = out.setdefault(e.txn_id, TxnHistory(e.txn_id, completed=[]))
        if e.kind is WalKind.TXN_START:
            h.start = e
        elif e.kind is WalKind.ACTION_COMPLETE:
            h.completed.append(e)
        elif e.kind is WalKind.ROLLBACK_START:
            h.rollback_started = True
        else:
            h.outcome = e.outcome
    return out


def check_wal_invariants(entries: list[WalEntry]) -> list[str]:
    """Return violations of the journal's structural invariants."""
    problems = []
    for i, e in enumerate(entries):
        if e.seq != i + 1:
            problems.append(f"entry {i} has seq {e.seq}")
    starts: dict[str, int] = {}
    last_index: dict[str, int] = {}
    finished: set[str] = set()
    for e in entries:
        if e.txn_id in finished:
            problems.append(f"{e.txn_id}: entry {e.seq} after terminal outcome")
        if e.kind is WalKind.TXN_START:
            starts[e.txn_id] = starts.get(e.txn_id, 0) + 1
            if starts[e.txn_id] > 1:
                problems.append(f"{e.txn_id}: duplicate txn_start")
            continue
        if e.txn_id not in starts:
            problems.append(f"{e.txn_id}: {e.kind.value} before txn_start")
        if e.kind is WalKind.ACTION_COMPLETE:
            if e.action_index <= last_index.get(e.txn_id, -1):
                problems.append(f"{e.txn_id}: action index {e.action_index} not increasing")
            last_index[e.txn_id] = e.action_index
        elif e.kind is WalKind.OUTCOME:
            finished.add(e.txn_id)
    return problems
