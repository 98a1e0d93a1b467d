"""SLO time series and the action-induced harm predicate."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

from ..errors import EvaluationError
from ..trace_model import ServiceRef


class SloTelemetry:
    """Per-service (p99 latency ms, error rate) samples at 1 s resolution."""

    def __init__(self, services: Iterable[ServiceRef]) -> None:
        self.services = tuple(services)
        self.timestamps: list[int] = []
        self.p99: dict[ServiceRef, list[float]] = {s: [] for s in self.services}
        self.errors: dict[ServiceRef, list[float]] = {s: [] for s in self.services}

    def __len__(self) -> int:
        return len(self.timestamps)

    def append(self, t: int, sample: Mapping[ServiceRef, tuple[float, float]]) -> None:
        if self.timestamps and t <= self.timestamps[-1]:
            raise ValueError(f"timestamp {t} is not after {self.timestamps[-1]}")
        rows = [sample[s] for s in self.services]
        for lat, err in rows:
            if not 0.0 <= err <= 1.0:
                raise ValueError(f"error rate {err} outside [0, 1]")
        self.timestamps.append(t)
        for s, (lat, err) in zip(self.services, rows):
            self.p99[s].append(lat)
            self.errors[s].append(err)

    def index_at(self, t: float) -> int:
        """Index of the first sample at or after ``t``."""
        if not self.timestamps:
            return 0
        first = self.timestamps[0]
        # samples are contiguous whole seconds
        return min(len(self.timestamps), max(0, int(-(-(t - first) // 1))))

    def mean(self, service: ServiceRef, start: float, end: float) -> tuple[float, float]:
        i, j = self.index_at(start), self.index_at(end)
        if j <= i:
            raise EvaluationError(f"no samples for {service} in [{start}, {end})")
        n = j - i
        return sum(self.p99[service][i:j]) / n, sum(self.errors[service][i:j]) / n

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "service", "p99_ms", "error_rate"])
        for k, t in enumerate(self.timestamps):
            for s in self.services:
                w.writerow([t, str(s), f"{self.p99[s][k]:.3f}", f"{self.errors[s][k]:.6f}"])


@dataclass(frozen=True)
class HarmVerdict:
    service: ServiceRef
    harmed: bool
    metric: str | None = None
    start: int | None = None
    duration_s: int = 0

    def to_json_obj(self) -> dict:
        return {"service": str(self.service), "harmed": self.harmed, "metric": self.metric,
                "start": self.start, "duration_s": self.duration_s}


@dataclass(frozen=True)
class HarmCriteria:
    baseline_s: float = 60.0
    grace_s: float = 5.0
    factor: float = 1.10
    min_duration_s: int = 30


def _longest_run(values: list[float], threshold: float, offset: int) -> tuple[int, int]:
    best, best_start, run, run_start = 0, -1, 0, 0
    for k, v in enumerate(values):
        if v > threshold:
            if run == 0:
                run_start = k
            run += 1
            if run > best:
                best, best_start = run, run_start + offset
        else:
            run = 0
    return best, best_start


def evaluate_harm(
    telemetry: SloTelemetry,
    action_start: float,
    criteria: HarmCriteria | None = None,
    services: Iterable[ServiceRef] | None = None,
) -> dict[ServiceRef, HarmVerdict]:
    """Per-service verdict: did either SLO metric regress after ``action_start``?

    The baseline is the mean over the preceding window, so whatever the
    fault was already doing before the action does not count. A service
    is harmed when latency or error rate stays above baseline times the
    factor for longer than the minimum duration, ignoring the grace
    period right after the action.
    """
    c = criteria or HarmCriteria()
    if not telemetry.timestamps or telemetry.timestamps[0] > action_start - c.baseline_s:
        raise EvaluationError(f"need {c.baseline_s:g} s of telemetry before t={action_start:g}")
    b0, b1 = telemetry.index_at(action_start - c.baseline_s), telemetry.index_at(action_start)
    if b1 - b0 < int(c.baseline_s):
        raise EvaluationError("baseline window has gaps")
    e0 = telemetry.index_at(action_start + c.grace_s)
    out: dict[ServiceRef, HarmVerdict] = {}
    for s in services if services is not None else telemetry.services:
        verdict = HarmVerdict(s, False)
        for metric, series in (("p99_ms", telemetry.p99[s]), ("error_rate", telemetry.errors[s])):
            baseline = sum(series[b0:b1]) / (b1 - b0)
            run, start = _longest_run(series[e0:], baseline * c.factor, e0)
            if run > c.min_duration_s and (not verdict.harmed or run > verdict.duration_s):
                verdict = HarmVerdict(s, True, metric, telemetry.timestamps[start], run)
        out[s] = verdict
    return out


def harmed_services(verdicts: Mapping[ServiceRef, HarmVerdict]) -> list[ServiceRef]:
    return sorted(s for s, v in verdicts.items() if v.harmed)
