"""Deterministic simulation, safety checking, bounded exploration and measurement."""

from .checker import Report, SlotHistory, Violation, check_invariants
from .single import measure_termination, run_instance, run_slots
from .stats import RunStats, SlotStats, read_trace, write_stats, write_trace
from .world import NetworkModel, SafetyViolation, ScenarioConfig, ScenarioResult, Workload, run_scenario

__all__ = [
    "NetworkModel",
    "Report",
    "RunStats",
    "SafetyViolation",
    "ScenarioConfig",
    "ScenarioResult",
    "SlotHistory",
    "SlotStats",
    "Violation",
    "Workload",
    "check_invariants",
    "measure_termination",
    "read_trace",
    "run_instance",
    "run_scenario",
    "run_slots",
    "write_stats",
    "write_trace",
]
