"""Scenario files: topology, fault schedule, timeline and model parameters."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..errors import ConfigError
from ..synth import hub_topology, preferential_attachment
from ..trace_model import CallGraph, ServiceRef
from .cluster import FaultKind, SimCluster, SimConfig


@dataclass(frozen=True)
class Timeline:
    fault_at_s: int = 20
    first_action_s: int = 80
    horizon_s: int = 300

    def __post_init__(self) -> None:
        if not 0 <= self.fault_at_s <= self.first_action_s < self.horizon_s:
            raise ConfigError("timeline needs fault_at_s <= first_action_s < horizon_s")


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    topology: CallGraph
    fault_kind: FaultKind | None
    fault_target: ServiceRef | None
    seed: int = 0
    timeline: Timeline = field(default_factory=Timeline)
    config: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self) -> None:
        if (self.fault_kind is None) != (self.fault_target is None):
            raise ConfigError("fault kind and target must be given together")
        if self.fault_target is not None and self.fault_target not in self.topology:
            raise ConfigError(f"fault target {self.fault_target} is not in the topology")

    def new_cluster(self, *, real_time: bool = False) -> SimCluster:
        return SimCluster(self.topology, self.config, seed=self.seed, real_time=real_time)

    def to_json_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "id": self.scenario_id,
            "seed": self.seed,
            "topology": self.topology.to_json_obj(),
            "timeline": {"fault_at_s": self.timeline.fault_at_s,
                         "first_action_s": self.timeline.first_action_s,
                         "horizon_s": self.timeline.horizon_s},
            "config": self.config.to_json_obj(),
        }
        if self.fault_kind is not None:
            obj["fault"] = {"kind": self.fault_kind.value, "target": str(self.fault_target)}
        return obj

    @classmethod
    def from_json_obj(cls, obj: Mapping[str, Any]) -> "Scenario":
        try:
            topo = obj["topology"]
            if "generator" in topo:
                topology = _generate(topo)
            else:
                topology = CallGraph.from_json_obj(topo)
            fault = obj.get("fault")
            kind = FaultKind(fault["kind"]) if fault else None
            target = ServiceRef.parse(fault["target"]) if fault else None
            return cls(
                scenario_id=str(obj.get("id", "scenario")),
                topology=topology,
                fault_kind=kind,
                fault_target=target,
                seed=int(obj.get("seed", 0)),
                timeline=Timeline(**obj.get("timeline", {})),
                config=SimConfig.from_json_obj(obj.get("config")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad scenario document: {exc}") from exc


def _generate(spec: Mapping[str, Any]) -> CallGraph:
    kind = spec["generator"]
    seed = int(spec.get("seed", 0))
    if kind == "hub":
        return hub_topology(seed)
    if kind == "preferential":
        return preferential_attachment(int(spec["nodes"]), int(spec["edges"]), seed)
    raise ConfigError(f"unknown topology generator {kind!r}")


def load_scenario(path: str | os.PathLike) -> Scenario:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return Scenario.from_json_obj(obj)


def save_scenario(scenario: Scenario, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(scenario.to_json_obj(), indent=2) + "\n")
