"""Simulated cluster backend, telemetry and harm evaluation."""

from .cluster import (
    ActionLogEntry,
    FaultKind,
    ServiceSnapshot,
    SimCluster,
    SimConfig,
    clone_cluster,
    state_of,
)
from .scenario import Scenario, Timeline, load_scenario, save_scenario
from .telemetry import HarmCriteria, HarmVerdict, SloTelemetry, evaluate_harm, harmed_services

__all__ = [
    "ActionLogEntry", "FaultKind", "HarmCriteria", "HarmVerdict", "Scenario", "ServiceSnapshot",
    "SimCluster", "SimConfig", "SloTelemetry", "Timeline", "clone_cluster", "evaluate_harm",
    "harmed_services", "load_scenario", "save_scenario", "state_of",
]
