"""The actuation microkernel: admission policy, journal, locks and executor."""

from .feedback import RejectCode, RejectionFeedback
from .locks import LockMode, LockRegistry, acquire_locks, lock_plan
from .microkernel import (
    ApplyResult,
    Backend,
    BackendUnavailable,
    ExecutionResult,
    Microkernel,
    OperatorAlert,
    SubmitResult,
    action_token,
    undo_token,
)
from .policy import CapabilitySet, Grant, KernelPolicy, RateWindow, Verdict, validate
from .wal import FileJournal, Journal, Outcome, WalEntry, WalKind, check_wal_invariants, load_wal

__all__ = [
    "ApplyResult", "Backend", "BackendUnavailable", "CapabilitySet", "ExecutionResult", "FileJournal",
    "Grant", "Journal", "KernelPolicy", "LockMode", "LockRegistry", "Microkernel", "OperatorAlert",
    "Outcome", "RateWindow", "RejectCode", "RejectionFeedback", "SubmitResult", "Verdict", "WalEntry",
    "WalKind", "acquire_locks", "action_token", "check_wal_invariants", "load_wal", "lock_plan",
    "undo_token", "validate",
]
