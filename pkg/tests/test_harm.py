import pytest

from kit import quiet_config, refs
from saferestart.errors import EvaluationError
from saferestart.isa import drain, restart, restore_traffic
from saferestart.sim import HarmCriteria, SimCluster, SloTelemetry, evaluate_harm, harmed_services
from saferestart.trace_model import CallGraph, ServiceRef

(S,) = refs(1)


def series(values, errors=None):
    tel = SloTelemetry([S])
    errors = errors or [0.001] * len(values)
    for t, (lat, err) in enumerate(zip(values, errors)):
        tel.append(t, {S: (lat, err)})
    return tel


def spike(start, length, total=200, base=10.0, high=20.0):
    return [high if start <= t < start + length else base for t in range(total)]


def test_flat_telemetry_is_harmless():
    verdicts = evaluate_harm(series([10.0] * 200), 60)
    assert harmed_services(verdicts) == [] and not verdicts[S].harmed


@pytest.mark.parametrize("length,harmed", [(30, False), (31, True)])
def test_duration_boundary(length, harmed):
    v = evaluate_harm(series(spike(70, length)), 60)[S]
    assert v.harmed is harmed
    if harmed:
        assert (v.metric, v.start, v.duration_s) == ("p99_ms", 70, 31)


def test_regression_must_exceed_ten_percent():
    assert not evaluate_harm(series(spike(70, 60, high=11.0)), 60)[S].harmed
    assert evaluate_harm(series(spike(70, 60, high=11.01)), 60)[S].harmed


def test_grace_period_is_excluded():
    # 36 s above threshold, but the first 5 fall inside the grace window
    assert not evaluate_harm(series(spike(60, 35)), 60)[S].harmed
    assert evaluate_harm(series(spike(60, 36)), 60)[S].harmed


def test_pre_action_incident_is_in_the_baseline():
    # an incident that was already at 100% errors cannot regress further
    errors = [0.001] * 20 + [1.0] * 180
    assert not evaluate_harm(series([10.0] * 200, errors), 80)[S].harmed


def test_interrupted_run_does_not_count():
    # two 20 s runs split by one sample at baseline
    values = [20.0 if 70 <= t < 110 and t != 90 else 10.0 for t in range(200)]
    assert not evaluate_harm(series(values), 60)[S].harmed


def test_error_metric():
    errors = [0.001 if not 70 <= t < 120 else 0.01 for t in range(200)]
    v = evaluate_harm(series([10.0] * 200, errors), 60)[S]
    assert v.harmed and v.metric == "error_rate" and v.duration_s == 50


def test_insufficient_baseline():
    with pytest.raises(EvaluationError):
        evaluate_harm(series([10.0] * 200), 59)
    with pytest.raises(EvaluationError):
        evaluate_harm(SloTelemetry([S]), 100)
    assert evaluate_harm(series([10.0] * 200), 60, HarmCriteria(baseline_s=10))[S].harmed is False


def hub_run(drain_first: bool, n_callers=25, restart_s=40.0):
    hub = ServiceRef("prod", "hub")
    callers = refs(n_callers, "prod", "c")
    sim = SimCluster(CallGraph(callers + [hub], {(c, hub): 1 for c in callers}),
                     quiet_config(restart_latency_s=restart_s, noise=0.02), seed=9)
    sim.advance_to(80)
    if drain_first:
        sim.apply(drain(hub), "t:0")
    sim.apply(restart(hub), "t:1")
    sim.advance_to(80 + restart_s)
    if drain_first:
        sim.apply(restore_traffic(hub), "t:0:restore")
    sim.advance_to(300)
    return hub, callers, evaluate_harm(sim.telemetry, 80)


def test_undrained_hub_restart_harms_callers():
    hub, callers, verdicts = hub_run(drain_first=False)
    assert set(callers) <= set(harmed_services(verdicts))
    # the callers see the 40 s outage plus the retry storm that follows it
    for c in callers:
        assert verdicts[c].duration_s > 40


def test_drained_hub_restart_is_harmless():
    _, _, verdicts = hub_run(drain_first=True)
    assert harmed_services(verdicts) == []


def test_short_restart_of_small_fan_in_is_harmless():
    _, _, verdicts = hub_run(drain_first=False, n_callers=5, restart_s=20.0)
    assert harmed_services(verdicts) == []
