import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kit import refs
from saferestart.errors import ConfigError
from saferestart.harness import (
    Misbehavior,
    Policy,
    PolicyConfig,
    clopper_pearson,
    default_suite,
    load_campaign,
    parallel_speedup_benchmark,
    run_campaign,
    run_incident,
    verify,
)
from saferestart.isa import drain, restart
from saferestart.kernel import RejectionFeedback
from saferestart.recovery_groups import infer_recovery_group
from saferestart.sim import FaultKind, Scenario
from saferestart.trace_model import CallGraph, ServiceRef

HUB = ServiceRef("prod", "hub")
DB = ServiceRef("prod", "db")
CALLERS = refs(25, "prod", "c")
GRAPH = CallGraph(CALLERS + [HUB, DB], {**{(c, HUB): 1 for c in CALLERS}, (HUB, DB): 1})
CLEAN = Misbehavior.none()


def scenario(kind=FaultKind.POD_FAILURE, target=DB, seed=1):
    return Scenario(f"{kind.value}-{target.name}", GRAPH, kind, target, seed=seed)


def committed_token_owners(record):
    return {c.txn_id for c in record.committed}


# -- worked incidents ----------------------------------------------------------------


def test_critic_on_leaf_pod_failure_restarts_leaf():
    rec = run_incident(scenario(), PolicyConfig(Policy.ISA_CRITIC, CLEAN))
    assert rec.diagnosed == DB
    assert len(rec.transcript) == 1
    entry = rec.transcript[0]
    assert [a["kind"] for a in entry.proposal["actions"]] == ["restart"]
    assert entry.proposal["actions"][0]["target"] == "prod/db"
    assert entry.verifier == {"approved": True, "issues": []}
    assert entry.kernel == "ACCEPT" and rec.outcome == "committed"
    assert not rec.harmed and rec.ttr.recovery_ms is not None


def test_raw_tools_skipping_drain_on_hub_harms():
    rec = run_incident(scenario(FaultKind.CPU_STRESS, HUB), PolicyConfig(Policy.RAW_TOOLS, Misbehavior(0, 1, 0)))
    assert rec.outcome == "applied" and rec.harmed
    assert set(CALLERS) <= {s for s, v in rec.harm.items() if v.harmed}
    # paired run: the same plan with the drain is harmless
    paired = run_incident(scenario(FaultKind.CPU_STRESS, HUB), PolicyConfig(Policy.RAW_TOOLS, CLEAN))
    assert not paired.harmed


def test_isa_only_out_of_scope_is_rejected_then_repaired():
    rec = run_incident(scenario(), PolicyConfig(Policy.ISA_ONLY, Misbehavior(1, 0, 0)))
    first, second = rec.transcript[:2]
    assert first.kernel == 'REJECT: out_of_scope("svc/hub" not in recovery_group)'
    assert {a["target"] for a in first.proposal["actions"]} == {"prod/db", "prod/hub"}
    assert second.kernel == "ACCEPT"
    assert [a["target"] for a in second.proposal["actions"]] == ["prod/db"]
    assert rec.outcome == "committed" and not rec.harmed


def test_critic_adds_the_missing_drain():
    rec = run_incident(scenario(FaultKind.CPU_STRESS, HUB), PolicyConfig(Policy.ISA_CRITIC, Misbehavior(0, 1, 0)))
    first, second = rec.transcript[:2]
    assert not first.verifier["approved"] and first.kernel is None
    assert first.verifier["issues"][0]["kind"] == "undrained_hub"
    # a stressed hub is saturated, so the plan also adds a replica
    assert [a["kind"] for a in second.proposal["actions"]] == ["drain", "restart", "scale"]
    assert not rec.harmed
    # the drain is undone once the hub is healthy again
    assert rec.committed[-1].actions == ["restore_traffic(prod/hub)"]


def test_verifier_flags_both_issue_kinds():
    group = infer_recovery_group(GRAPH, HUB)
    assert HUB in group.drain_set
    report = verify([restart(HUB), restart(CALLERS[0])], group)
    assert [i["kind"] for i in report["issues"]] == ["undrained_hub", "outside_group"]
    assert all(i["rationale"] for i in report["issues"])
    assert verify([drain(HUB), restart(HUB)], group)["approved"]


def test_scenario_without_fault_is_config_error():
    with pytest.raises(ConfigError):
        run_incident(Scenario("none", GRAPH, None, None), PolicyConfig())


# -- properties over a small suite ---------------------------------------------------

SUITE = default_suite(12, seed=3)
WILD = Misbehavior(0.7, 0.7, 0.5)


@pytest.mark.parametrize("policy", [Policy.ISA_ONLY, Policy.ISA_CRITIC])
def test_isa_policies_only_act_through_the_kernel(policy):
    for sc in SUITE:
        rec = run_incident(sc, PolicyConfig(policy, WILD, seed=2))
        assert not any(t.startswith("raw:") for t in rec.tokens)
        accepted = {t.proposal["txn_id"] for t in rec.transcript if t.kernel == "ACCEPT"}
        owners = {tok.split(":")[0] for tok in rec.tokens}
        assert owners <= accepted
        # effects that outlive the incident belong to committed transactions
        undone = {tok.split(":")[0] for tok in rec.tokens if tok.endswith(":undo")}
        assert owners - undone <= committed_token_owners(rec)


def test_transcript_feedback_round_trips():
    seen = 0
    for sc in SUITE:
        rec = run_incident(sc, PolicyConfig(Policy.ISA_ONLY, Misbehavior(1, 0.5, 0.5), seed=4))
        assert len([t for t in rec.transcript if "-restore" not in t.proposal.get("txn_id", "")]) <= 4
        for t in rec.transcript:
            if t.kernel and t.kernel.startswith("REJECT"):
                assert RejectionFeedback.parse(t.kernel).render() == t.kernel
                seen += 1
    assert seen > 0


def _stable(rec):
    obj = rec.to_json_obj()
    obj["ttr"].pop("kernel_ms")
    obj["ttr"].pop("total_ms")
    return json.dumps(obj, sort_keys=True)


def test_incidents_are_deterministic():
    for policy in Policy:
        cfg = PolicyConfig(policy, WILD, seed=9)
        for sc in SUITE[:4]:
            assert _stable(run_incident(sc, cfg)) == _stable(run_incident(sc, cfg))


def test_raw_tools_harm_orders_above_isa():
    rates = {p: run_campaign(SUITE, PolicyConfig(p, seed=1)).harmed for p in Policy}
    assert rates[Policy.ISA_CRITIC] <= rates[Policy.ISA_ONLY] <= rates[Policy.RAW_TOOLS]
    assert rates[Policy.ISA_CRITIC] == 0


def test_campaign_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"policy": "isa_only", "seed": 5,
                                "misbehavior": {"p_out_of_scope": 0.1, "p_skip_drain": 0.2, "p_wrong_target": 0.3},
                                "scenarios": {"default_suite": {"n": 4, "seed": 2}}}))
    scenarios, cfg = load_campaign(str(path))
    assert len(scenarios) == 4 and cfg.policy is Policy.ISA_ONLY and cfg.misbehavior.p_wrong_target == 0.3
    path.write_text(json.dumps({"misbehavior": {"p_skip_drain": 2}}))
    with pytest.raises(ConfigError):
        load_campaign(str(path))
    path.write_text(json.dumps({"scenarios": 3}))
    with pytest.raises(ConfigError):
        load_campaign(str(path))


def test_default_suite_shape():
    suite = default_suite(10, seed=7)
    assert [s.fault_kind for s in suite[:5]] == list(FaultKind)
    assert all(s.fault_target.name.startswith("hub-") for s in suite[::2])
    assert default_suite(10, seed=7) == suite
    assert {s.fault_kind for s in default_suite(6, kinds=["io_delay"])} == {FaultKind.IO_DELAY}


# -- exact binomial interval -------------------------------------------------------------


def _binom_cdf(k, n, p):
    return sum(math.comb(n, i) * p ** i * (1 - p) ** (n - i) for i in range(k + 1))


def _bisect(f, lo=0.0, hi=1.0):
    # f is increasing on [lo, hi]
    for _ in range(200):
        mid = (lo + hi) / 2
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def oracle_interval(k, n, alpha=0.05):
    """Clopper-Pearson bounds by inverting binomial tails numerically."""
    lo = 0.0 if k == 0 else _bisect(lambda p: (1 - _binom_cdf(k - 1, n, p)) - alpha / 2)
    hi = 1.0 if k == n else _bisect(lambda p: alpha / 2 - _binom_cdf(k, n, p))
    return lo, hi


@given(st.integers(1, 60).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_clopper_pearson_matches_oracle(kn):
    k, n = kn
    got, want = clopper_pearson(k, n), oracle_interval(k, n)
    assert got == pytest.approx(want, abs=1e-9)


def pct(interval):
    return [round(100 * x) for x in interval]


@pytest.mark.parametrize("k,n,expected", [(0, 30, [0, 12]), (0, 50, [0, 7]), (0, 10, [0, 31])])
def test_zero_harm_intervals(k, n, expected):
    assert pct(clopper_pearson(k, n)) == expected


def test_ninety_percent_interval():
    lo, hi = clopper_pearson(27, 30)
    assert round(100 * hi) == 98
    assert 100 * lo == pytest.approx(73.47, abs=0.01)


@pytest.mark.xfail(strict=True, reason="exact interval lower bound is 73.47%, which rounds to 73")
def test_ninety_percent_interval_lower_bound_reads_74():
    assert pct(clopper_pearson(27, 30))[0] == 74


def test_single_trial_interval():
    lo, hi = clopper_pearson(1, 1)
    assert lo == pytest.approx(0.025) and hi == 1.0
    with pytest.raises(ValueError):
        clopper_pearson(2, 1)


def test_single_action_has_no_speedup():
    rep = parallel_speedup_benchmark(actions=1, action_latency_s=0.1)
    assert abs(rep.sequential_ms - rep.parallel_ms) < 50
