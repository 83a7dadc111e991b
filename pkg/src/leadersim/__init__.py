"""Deterministic simulator of Raft, Z-Raft and Escape leader election under faults."""

from .checker import CheckReport, Violation, check_trace
from .config import Configuration, ProtocolParams, Role, Variant, compute_election_timeout
from .harness import (
    Scenario,
    SummaryStats,
    TrialResult,
    force_competing_phases,
    make_scenario,
    run_experiment,
    run_trial,
    summarize,
)
from .simnet import FaultSchedule, LatencyModel, Trace, World

__all__ = [
    "CheckReport",
    "Configuration",
    "FaultSchedule",
    "LatencyModel",
    "ProtocolParams",
    "Role",
    "Scenario",
    "SummaryStats",
    "Trace",
    "TrialResult",
    "Variant",
    "Violation",
    "World",
    "check_trace",
    "compute_election_timeout",
    "force_competing_phases",
    "make_scenario",
    "run_experiment",
    "run_trial",
    "summarize",
]
