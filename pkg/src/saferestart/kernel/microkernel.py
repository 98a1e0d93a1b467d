"""The trusted actuation kernel: admit, execute, roll back and recover."""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from ..errors import ContractError, SchemaError
from ..isa import (
    Action,
    EffectType,
    FailurePolicy,
    IsaRegistry,
    Precondition,
    RemediationTransaction,
    ServiceView,
    effect_type_of,
    evaluate_precondition,
    inverse_of,
    parse_transaction,
)
from ..recovery_groups import RecoveryGroup
from ..trace_model import ServiceRef
from .feedback import RejectionFeedback
from .locks import LockHandle, LockRegistry
from .policy import CapabilitySet, KernelPolicy, RateWindow, Verdict, validate
from .wal import Journal, Outcome, WalKind, txn_histories

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ApplyResult:
    ok: bool
    detail: str = ""


class Backend(Protocol):
    """What the kernel needs from the infrastructure it actuates."""

    def snapshot(self) -> Mapping[ServiceRef, ServiceView]: ...

    def apply(self, action: Action, token: str) -> ApplyResult: ...


class BackendUnavailable(ConnectionError):
    pass


@dataclass(frozen=True)
class OperatorAlert:
    txn_id: str
    action_index: int
    detail: str


@dataclass
class ExecutionResult:
    txn_id: str
    outcome: Outcome
    feedback: RejectionFeedback | None = None
    failed_action: int | None = None
    detail: str = ""
    kernel_seconds: float = 0.0
    backend_seconds: float = 0.0


@dataclass
class SubmitResult:
    verdict: Verdict
    execution: ExecutionResult | None = None

    @property
    def outcome(self) -> Outcome | None:
        return self.execution.outcome if self.execution else None

    @property
    def feedback(self) -> RejectionFeedback | None:
        if self.verdict.feedback is not None:
            return self.verdict.feedback
        return self.execution.feedback if self.execution else None


def action_token(txn_id: str, index: int) -> str:
    return f"{txn_id}:{index}"


def undo_token(txn_id: str, index: int) -> str:
    return f"{txn_id}:{index}:undo"


@dataclass
class _Timer:
    backend: float = 0.0


class Microkernel:
    """Validates remediation transactions and executes them as sagas.

    ``clock`` feeds the rate-limit window; ``sleep`` is used for the
    retry backoff (swap both for virtual time in simulations).
    """

    def __init__(
        self,
        backend: Backend,
        journal: Journal,
        capabilities: CapabilitySet,
        policy: KernelPolicy | None = None,
        *,
        registry: IsaRegistry | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        max_retries: int = 3,
        retry_backoff_s: float = 0.1,
    ) -> None:
        self.backend = backend
        self.journal = journal
        self.capabilities = capabilities
        self.policy = policy or KernelPolicy()
        self.registry = registry
        self.clock = clock
        self.sleep = sleep
        self.max_retries = max_retries
        self.retry_backoff_s = retry_backoff_s
        self.locks = LockRegistry()
        self.rate_window = RateWindow(self.policy.window_s)
        self.alerts: list[OperatorAlert] = []
        self._admission = threading.Lock()
        self._in_flight: dict[str, RemediationTransaction] = {}
        self._stuck: dict[str, LockHandle] = {}

    # -- admission -------------------------------------------------------------

    def in_flight(self) -> list[RemediationTransaction]:
        with self._admission:
            return list(self._in_flight.values())

    def validate(self, txn: RemediationTransaction, scope: RecoveryGroup) -> Verdict:
        """Dry-run admission against the current in-flight set."""
        with self._admission:
            return self._validate_locked(txn, scope, {})

    def _validate_locked(self, txn: RemediationTransaction, scope: RecoveryGroup,
                         pending: dict[str, int]) -> Verdict:
        return validate(
            txn, scope, self.capabilities, self.policy, self._in_flight.values(),
            rate_window=self.rate_window, now=self.clock(), registry=self.registry,
            pending=pending,
        )

    def parse_and_validate(self, document: str, scope: RecoveryGroup) -> tuple[RemediationTransaction | None, Verdict]:
        try:
            txn = parse_transaction(document, self.registry)
        except SchemaError as exc:
            return None, Verdict(RejectionFeedback.schema_error(str(exc)))
        return txn, self.validate(txn, scope)

    def submit(self, txn: RemediationTransaction, scope: RecoveryGroup) -> SubmitResult:
        """Validate, then execute an accepted transaction to its outcome."""
        with self._admission:
            verdict = self._validate_locked(txn, scope, {})
            if not verdict.accepted:
                return SubmitResult(verdict)
            self._admit_locked(txn)
        return SubmitResult(verdict, self._execute_admitted(txn))

    def submit_batch(
        self,
        txns: Sequence[RemediationTransaction],
        scope: RecoveryGroup,
        *,
        max_workers: int | None = None,
    ) -> list[SubmitResult]:
        """Admit several transactions at once and run them concurrently.

        Each is validated against transactions already in flight (not
        against its batch siblings); admitted siblings with overlapping
        keys queue on the lock registry.
        """
        results: list[SubmitResult] = []
        admitted: list[int] = []
        with self._admission:
            pending: dict[str, int] = {}
            seen: set[str] = set()
            for txn in txns:
                verdict = self._validate_locked(txn, scope, pending)
                if verdict.accepted and txn.txn_id in seen:
                    verdict = Verdict(RejectionFeedback.conflict(txn.sorted_keys()[0], txn.txn_id))
                results.append(SubmitResult(verdict))
                if verdict.accepted:
                    seen.add(txn.txn_id)
                    for ns in txn.namespaces:
                        pending[ns] = pending.get(ns, 0) + 1
                    admitted.append(len(results) - 1)
            for i in admitted:
                self._admit_locked(txns[i])
        if admitted:
            workers = max_workers or len(admitted)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {i: pool.submit(self._execute_admitted, txns[i]) for i in admitted}
                for i, fut in futures.items():
                    results[i].execution = fut.result()
        return results

    def _admit_locked(self, txn: RemediationTransaction) -> None:
        self._in_flight[txn.txn_id] = txn
        self.rate_window.record(txn.namespaces, self.clock())

    def _finish(self, txn: RemediationTransaction, handle: LockHandle | None, outcome: Outcome) -> None:
        if outcome is Outcome.COMPENSATION_FAILED:
            # keys stay locked and in flight until an operator releases them
            if handle is not None:
                self._stuck[txn.txn_id] = handle
            return
        if handle is not None:
            self.locks.release(handle)
        with self._admission:
            self._in_flight.pop(txn.txn_id, None)

    def operator_release(self, txn_id: str) -> None:
        handle = self._stuck.pop(txn_id, None)
        if handle is None:
            raise ContractError(f"{txn_id} holds no operator-released locks")
        self.locks.release(handle)
        with self._admission:
            self._in_flight.pop(txn_id, None)

    # -- execution ---------------------------------------------------------------

    def execute(self, txn: RemediationTransaction) -> ExecutionResult:
        """Execute an already-validated transaction (acquires its locks)."""
        with self._admission:
            self._in_flight[txn.txn_id] = txn
        return self._execute_admitted(txn)

    def _execute_admitted(self, txn: RemediationTransaction) -> ExecutionResult:
        t0 = time.perf_counter()
        timer = _Timer()
        handle = self.locks.acquire(txn.conflict_keys, txn.txn_id)
        outcome = Outcome.ABORTED
        try:
            result = self._run(txn, timer)
            outcome = result.outcome
        finally:
            self._finish(txn, handle, outcome)
        total = time.perf_counter() - t0
        result.backend_seconds = timer.backend
        result.kernel_seconds = max(0.0, total - timer.backend)
        return result

    def _snapshot(self, timer: _Timer) -> Mapping[ServiceRef, ServiceView]:
        t = time.perf_counter()
        try:
            return self.backend.snapshot()
        finally:
            timer.backend += time.perf_counter() - t

    def _failed_precondition(self, txn: RemediationTransaction, timer: _Timer) -> Precondition | None:
        if not txn.preconditions:
            return None
        snap = self._snapshot(timer)
        for pre in txn.preconditions:
            if not evaluate_precondition(pre, snap):
                return pre
        return None

    def _run(self, txn: RemediationTransaction, timer: _Timer) -> ExecutionResult:
        failed = self._failed_precondition(txn, timer)
        doc = txn.to_json_obj()
        if failed is not None:
            self.journal.append(WalKind.TXN_START, txn.txn_id, transaction=doc)
            self.journal.append(WalKind.OUTCOME, txn.txn_id, outcome=Outcome.ABORTED)
            return ExecutionResult(txn.txn_id, Outcome.ABORTED,
                                   feedback=RejectionFeedback.precondition_failed(failed.describe()))
        self.journal.append(WalKind.TXN_START, txn.txn_id, transaction=doc)
        return self._run_forward(txn, 0, [], timer)

    def _apply(self, action: Action, token: str, timer: _Timer) -> ApplyResult:
        if effect_type_of(action.kind, self.registry) is EffectType.IRREVERSIBLE:
            # break-glass execution path: never actuated automatically
            logger.warning("break-glass: %s on %s needs out-of-band operator approval; refusing",
                           action.verb, action.target)
            return ApplyResult(False, "irreversible action requires out-of-band approval")
        t = time.perf_counter()
        try:
            return self.backend.apply(action, token)
        except (ConnectionError, TimeoutError, OSError) as exc:
            return ApplyResult(False, f"backend unreachable: {exc}")
        finally:
            timer.backend += time.perf_counter() - t

    def _apply_with_retry(self, action: Action, token: str, timer: _Timer) -> ApplyResult:
        attempts = 1
        if effect_type_of(action.kind, self.registry) is EffectType.RESTARTABLE:
            attempts += self.max_retries
        result = ApplyResult(False, "not attempted")
        for attempt in range(attempts):
            if attempt:
                self.sleep(self.retry_backoff_s)
            result = self._apply(action, token, timer)
            if result.ok:
                return result
            logger.info("%s failed (attempt %d/%d): %s", token, attempt + 1, attempts, result.detail)
        return result

    def _run_forward(self, txn: RemediationTransaction, start: int, completed: list[int],
                     timer: _Timer) -> ExecutionResult:
        for i in range(start, len(txn.actions)):
            result = self._apply_with_retry(txn.actions[i], action_token(txn.txn_id, i), timer)
            if not result.ok:
                return self._fail(txn, completed, i, result.detail, timer)
            self.journal.append(WalKind.ACTION_COMPLETE, txn.txn_id, action_index=i,
                                token=action_token(txn.txn_id, i))
            completed.append(i)
        self.journal.append(WalKind.OUTCOME, txn.txn_id, outcome=Outcome.COMMITTED)
        return ExecutionResult(txn.txn_id, Outcome.COMMITTED)

    def _fail(self, txn: RemediationTransaction, completed: list[int], failed_index: int | None,
              detail: str, timer: _Timer, *, journal_start: bool = True) -> ExecutionResult:
        policy = txn.failure_policy
        if policy is FailurePolicy.ABORT_ONLY:
            self.journal.append(WalKind.OUTCOME, txn.txn_id, outcome=Outcome.ABORTED)
            return ExecutionResult(txn.txn_id, Outcome.ABORTED, failed_action=failed_index, detail=detail)
        if journal_start:
            self.journal.append(WalKind.ROLLBACK_START, txn.txn_id, action_index=failed_index)
        outcome = self._undo(txn, completed, timer)
        self.journal.append(WalKind.OUTCOME, txn.txn_id, outcome=outcome)
        return ExecutionResult(txn.txn_id, outcome, failed_action=failed_index, detail=detail)

    def _undo_action(self, txn: RemediationTransaction, i: int) -> Action | None:
        action = txn.actions[i]
        effect = effect_type_of(action.kind, self.registry)
        if effect is EffectType.COMPENSATABLE:
            return action.compensation
        if effect is EffectType.REVERSIBLE and txn.failure_policy is FailurePolicy.ROLLBACK_ALL:
            try:
                return inverse_of(action, self.registry)
            except ContractError:
                # removing a rate limit: nothing mechanical to undo
                return None
        return None

    def _undo(self, txn: RemediationTransaction, completed: Iterable[int], timer: _Timer) -> Outcome:
        for i in sorted(completed, reverse=True):
            undo = self._undo_action(txn, i)
            if undo is None:
                continue
            result = self._apply(undo, undo_token(txn.txn_id, i), timer)
            if not result.ok:
                alert = OperatorAlert(txn.txn_id, i, f"undo of {txn.actions[i].describe()} failed: {result.detail}")
                self.alerts.append(alert)
                logger.error("OPERATOR ALERT %s action %d: %s", alert.txn_id, i, alert.detail)
                return Outcome.COMPENSATION_FAILED
        return Outcome.ROLLED_BACK

    # -- crash recovery ----------------------------------------------------------

    def recover(self) -> dict[str, Outcome]:
        """Resolve every journaled transaction that lacks an outcome.

        Completed actions are never re-applied. Forward progress reuses
        each action's idempotency token, so an effect that landed just
        before the crash is not applied twice.
        """
        resolved: dict[str, Outcome] = {}
        for txn_id, hist in txn_histories(self.journal.entries()).items():
            if hist.outcome is not None or hist.start is None:
                continue
            txn = parse_transaction(hist.start.transaction, self.registry)
            completed = [e.action_index for e in hist.completed]
            timer = _Timer()
            handle = self.locks.acquire(txn.conflict_keys, txn.txn_id)
            with self._admission:
                self._in_flight[txn_id] = txn
            outcome = Outcome.ABORTED
            try:
                if hist.rollback_started:
                    result = self._fail(txn, completed, None, "resumed after crash", timer,
                                        journal_start=False)
                else:
                    result = self._resume(txn, completed, timer)
                outcome = result.outcome
            finally:
                self._finish(txn, handle, outcome)
            logger.info("recovered %s -> %s", txn_id, outcome.value)
            resolved[txn_id] = outcome
        return resolved

    def _resume(self, txn: RemediationTransaction, completed: list[int], timer: _Timer) -> ExecutionResult:
        nxt = (max(completed) + 1) if completed else 0
        if nxt >= len(txn.actions):
            self.journal.append(WalKind.OUTCOME, txn.txn_id, outcome=Outcome.COMMITTED)
            return ExecutionResult(txn.txn_id, Outcome.COMMITTED)
        if self._failed_precondition(txn, timer) is None:
            return self._run_forward(txn, nxt, list(completed), timer)
        # The next action may or may not have landed before the crash.
        # Re-applying it under its own token settles that question (a
        # duplicate is a no-op) so the rollback below covers it as well.
        settled = self._apply(txn.actions[nxt], action_token(txn.txn_id, nxt), timer)
        done = list(completed)
        if settled.ok:
            self.journal.append(WalKind.ACTION_COMPLETE, txn.txn_id, action_index=nxt,
                                token=action_token(txn.txn_id, nxt))
            done.append(nxt)
        return self._fail(txn, done, None, "preconditions no longer hold after crash", timer)
