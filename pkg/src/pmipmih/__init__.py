"""Packet-level simulation of PMIPv6 and PMIPv6 with MIH-assisted handover."""
from .analytics import LatencyBudget, LatencyParams, closed_form, latency_gap
from .engine import Engine, ScenarioError, SimulationError
from .scenario import Scenario, ScenarioValidationError, load_scenario
from .sim import RunResult, Simulation, run_scenario

__all__ = [
    "Engine", "ScenarioError", "SimulationError", "LatencyParams", "LatencyBudget",
    "closed_form", "latency_gap", "Scenario", "ScenarioValidationError", "load_scenario",
    "Simulation", "RunResult", "run_scenario",
]
