import json

import pytest

from kit import RecordingJournal, make_kernel, quiet_config, refs, scope_of, validate_schema
from saferestart.errors import ContractError, WalCorruptionError
from saferestart.isa import (
    ActionKind,
    FailurePolicy,
    Precondition,
    PreconditionKind,
    TrafficState,
    drain,
    rate_limit,
    restart,
    rollback_config,
    scale,
    transaction_for,
)
from saferestart.kernel import (
    FileJournal,
    Journal,
    Outcome,
    RejectCode,
    WalKind,
    check_wal_invariants,
    load_wal,
)
from saferestart.sim.cluster import SimCluster, state_of
from saferestart.trace_model import CallGraph

A, B, C = refs(3)
SCOPE = scope_of([A, B, C])


def cluster():
    return SimCluster(CallGraph([A, B, C], {(A, B): 1}), quiet_config())


def kinds(journal):
    return [(e.kind, e.action_index, e.outcome) for e in journal.entries()]


def test_happy_path_wal():
    sim = cluster()
    journal = Journal()
    res = make_kernel(sim, journal).submit(transaction_for("t", [restart(A)]), SCOPE)
    assert res.outcome is Outcome.COMMITTED
    assert kinds(journal) == [(WalKind.TXN_START, None, None), (WalKind.ACTION_COMPLETE, 0, None),
                              (WalKind.OUTCOME, None, Outcome.COMMITTED)]
    assert journal.entries()[1].token == "t:0"
    assert sim.tokens() == ["t:0"]


def test_rollback_all_restores_scale():
    sim = cluster()
    initial = state_of(sim)
    sim.force_failures(B, 4, ActionKind.RESTART)
    res = make_kernel(sim).submit(transaction_for("t", [scale(A, 2), restart(B)]), SCOPE)
    assert res.outcome is Outcome.ROLLED_BACK and res.execution.failed_action == 1
    assert state_of(sim) == initial
    assert len(sim.failed_attempts) == 4  # 1 try + 3 retries


def test_restart_retries_then_succeeds():
    sim = cluster()
    sim.force_failures(B, 3)
    res = make_kernel(sim).submit(transaction_for("t", [restart(B)]), SCOPE)
    assert res.outcome is Outcome.COMMITTED and len(sim.failed_attempts) == 3


def test_non_restartable_is_not_retried():
    sim = cluster()
    sim.force_failures(A, 1)
    res = make_kernel(sim).submit(transaction_for("t", [scale(A, 1)]), SCOPE)
    assert res.outcome is Outcome.ROLLED_BACK and len(sim.failed_attempts) == 1


def test_compensate_restores_traffic():
    sim = cluster()
    sim.force_failures(B, 1)
    txn = transaction_for("t", [drain(A), restart(A), scale(B, 1)], failure_policy=FailurePolicy.COMPENSATE)
    res = make_kernel(sim).submit(txn, SCOPE)
    assert res.outcome is Outcome.ROLLED_BACK
    assert sim.service(A).traffic is TrafficState.SERVING
    assert [e.token for e in sim.action_log] == ["t:0", "t:1", "t:0:undo"]


def test_compensate_skips_reversible_inverses():
    sim = cluster()
    sim.force_failures(B, 1)
    txn = transaction_for("t", [scale(A, 2), scale(B, 1)], failure_policy=FailurePolicy.COMPENSATE)
    assert make_kernel(sim).submit(txn, SCOPE).outcome is Outcome.ROLLED_BACK
    assert sim.service(A).replicas == 5


def test_rollback_all_undoes_in_reverse_order():
    sim = cluster()
    initial = state_of(sim)
    sim.force_failures(C, 1)
    txn = transaction_for("t", [scale(A, 1), drain(B), rollback_config(A, "v2", "v1"), rate_limit(B, 50),
                                scale(C, 1)])
    assert make_kernel(sim).submit(txn, SCOPE).outcome is Outcome.ROLLED_BACK
    assert state_of(sim) == initial
    assert [e.token for e in sim.action_log][4:] == ["t:3:undo", "t:2:undo", "t:1:undo", "t:0:undo"]


def test_abort_only_leaves_prefix():
    sim = cluster()
    sim.force_failures(B, 1)
    journal = Journal()
    txn = transaction_for("t", [scale(A, 2), scale(B, 1)], failure_policy=FailurePolicy.ABORT_ONLY)
    assert make_kernel(sim, journal).submit(txn, SCOPE).outcome is Outcome.ABORTED
    assert sim.service(A).replicas == 5
    assert kinds(journal)[-1] == (WalKind.OUTCOME, None, Outcome.ABORTED)


def test_precondition_failure_aborts_without_effects():
    sim = cluster()
    journal = Journal()
    txn = transaction_for("t", [scale(A, 1)],
                          preconditions=[Precondition(PreconditionKind.REPLICA_COUNT_AT_LEAST, A, count=4)])
    res = make_kernel(sim, journal).submit(txn, SCOPE)
    assert res.outcome is Outcome.ABORTED
    assert res.feedback.code is RejectCode.PRECONDITION_FAILED
    assert res.feedback.render() == 'REJECT: precondition_failed("replica_count_at_least(prod/s00, 4)")'
    assert sim.action_log == []
    assert [k for k, _, _ in kinds(journal)] == [WalKind.TXN_START, WalKind.OUTCOME]


def test_scale_below_zero_fails_and_rolls_back():
    sim = cluster()
    res = make_kernel(sim).submit(transaction_for("t", [scale(A, 1), scale(B, -4)]), SCOPE)
    assert res.outcome is Outcome.ROLLED_BACK
    assert sim.service(A).replicas == 3 and sim.service(B).replicas == 3


def test_backend_unreachable_is_a_failure():
    sim = cluster()
    sim.unreachable = True
    res = make_kernel(sim).submit(transaction_for("t", [restart(A)]), SCOPE)
    assert res.outcome is Outcome.ROLLED_BACK
    assert "unreachable" in res.execution.detail


def test_compensation_failure_alerts_and_keeps_locks():
    sim = cluster()
    kernel = make_kernel(sim)
    # the drain lands, the scale fails, then the compensation fails too
    sim.force_failures(B, 1)
    sim.force_failures(A, 1, ActionKind.RESTORE_TRAFFIC)
    res = kernel.submit(transaction_for("t", [drain(A), scale(B, 1)]), SCOPE)
    assert res.outcome is Outcome.COMPENSATION_FAILED
    assert len(kernel.alerts) == 1 and kernel.alerts[0].txn_id == "t"
    blocked = kernel.submit(transaction_for("u", [scale(A, 1)]), SCOPE)
    assert blocked.feedback.code is RejectCode.CONFLICT
    kernel.operator_release("t")
    assert kernel.submit(transaction_for("u", [scale(A, 1)]), SCOPE).outcome is Outcome.COMMITTED
    with pytest.raises(ContractError):
        kernel.operator_release("t")


def test_txn_start_precedes_every_effect():
    sim = cluster()
    journal = RecordingJournal(sim)
    kernel = make_kernel(sim, journal)
    sim.force_failures(C, 1)
    for i, txn in enumerate([transaction_for("a", [scale(A, 1), restart(B)]),
                             transaction_for("b", [drain(A), scale(C, 1)])]):
        kernel.submit(txn, SCOPE)
    starts = {e.txn_id: journal.effects_at[e.seq] for e in journal.entries() if e.kind is WalKind.TXN_START}
    effects_before = {}
    for n, entry in enumerate(sim.action_log):
        txn_id = entry.token.split(":")[0]
        effects_before.setdefault(txn_id, n)
    for txn_id, first_effect in effects_before.items():
        assert starts[txn_id] <= first_effect


def test_wal_file_format(tmp_path):
    path = tmp_path / "k.wal"
    sim = cluster()
    sim.force_failures(B, 1)
    with FileJournal(path) as journal:
        kernel = make_kernel(sim, journal)
        kernel.submit(transaction_for("t1", [scale(A, 1)]), SCOPE)
        kernel.submit(transaction_for("t2", [drain(A), scale(B, 1)]), SCOPE)
    lines = path.read_text().splitlines()
    for i, line in enumerate(lines, start=1):
        obj = json.loads(line)
        assert obj["seq"] == i
        validate_schema(obj, "wal_entry")
    entries = load_wal(path)
    assert check_wal_invariants(entries) == []
    assert [e.kind for e in entries if e.txn_id == "t2"] == [
        WalKind.TXN_START, WalKind.ACTION_COMPLETE, WalKind.ROLLBACK_START, WalKind.OUTCOME]
    # reopening continues the sequence
    with FileJournal(path) as journal:
        assert journal.append(WalKind.OUTCOME, "zz", outcome=Outcome.ABORTED).seq == len(lines) + 1


def test_wal_torn_tail_is_truncated(tmp_path):
    path = tmp_path / "k.wal"
    with FileJournal(path) as journal:
        make_kernel(cluster(), journal).submit(transaction_for("t", [scale(A, 1)]), SCOPE)
    good = path.read_bytes()
    path.write_bytes(good + b'{"seq": 4, "kind": "txn_st')
    assert len(load_wal(path)) == 3
    with FileJournal(path) as journal:
        assert len(journal.entries()) == 3
    assert path.read_bytes() == good


def test_wal_mid_file_corruption_is_fatal(tmp_path):
    path = tmp_path / "k.wal"
    with FileJournal(path) as journal:
        make_kernel(cluster(), journal).submit(transaction_for("t", [scale(A, 1)]), SCOPE)
    lines = path.read_bytes().split(b"\n")
    lines[1] = b"garbage"
    path.write_bytes(b"\n".join(lines))
    with pytest.raises(WalCorruptionError):
        load_wal(path)


def test_wal_sequence_gap_is_fatal(tmp_path):
    path = tmp_path / "k.wal"
    path.write_text('{"seq":1,"kind":"outcome","txn_id":"a","outcome":"aborted"}\n'
                    '{"seq":3,"kind":"outcome","txn_id":"b","outcome":"aborted"}\n'
                    '{"seq":4,"kind":"outcome","txn_id":"c","outcome":"aborted"}\n')
    with pytest.raises(WalCorruptionError):
        load_wal(path)


def test_check_wal_invariants_flags_problems():
    j = Journal()
    j.append(WalKind.ACTION_COMPLETE, "x", action_index=0, token="x:0")
    j.append(WalKind.TXN_START, "y", transaction={})
    j.append(WalKind.OUTCOME, "y", outcome=Outcome.COMMITTED)
    j.append(WalKind.ACTION_COMPLETE, "y", action_index=0, token="y:0")
    problems = check_wal_invariants(j.entries())
    assert any("before txn_start" in p for p in problems)
    assert any("after terminal outcome" in p for p in problems)


def test_break_glass_stub_refuses(caplog):
    from saferestart.isa import ActionExtension, ConflictKey, EffectType, IsaRegistry, parse_transaction
    from saferestart.kernel import CapabilitySet, KernelPolicy

    reg = IsaRegistry()
    reg.register(ActionExtension("drop_table", EffectType.IRREVERSIBLE, lambda a: [ConflictKey.service(a.target)]))
    sim = cluster()
    kernel = make_kernel(sim, caps=CapabilitySet.of("*:*"), policy=KernelPolicy(break_glass_enabled=True),
                         registry=reg)
    txn = parse_transaction({"txn_id": "bg", "actions": [{"kind": "drop_table", "target": "prod/s00"}],
                             "conflict_keys": [{"granularity": "service", "ref": "prod/s00"}],
                             "failure_policy": "abort_only"}, reg)
    res = kernel.submit(txn, SCOPE)
    assert res.verdict.accepted and res.outcome is Outcome.ABORTED
    assert sim.action_log == []
    assert "out-of-band" in caplog.text
