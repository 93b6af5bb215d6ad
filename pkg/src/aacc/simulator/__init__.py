"""Closed-loop scenarios, the baseline ACC and evaluation metrics."""

from aacc.simulator.controllers import AaccController, AccParams, Leader, StyleTracker, baseline_acc_control
from aacc.simulator.log import SimLog
from aacc.simulator.metrics import Metrics, compute_metrics, time_headway, tth
from aacc.simulator.runner import run, run_function_validation, run_traffic_flow
from aacc.simulator.scenario import Scenario
from aacc.simulator.world import World

__all__ = [
    "AaccController",
    "AccParams",
    "Leader",
    "Metrics",
    "Scenario",
    "SimLog",
    "StyleTracker",
    "World",
    "baseline_acc_control",
    "compute_metrics",
    "run",
    "run_function_validation",
    "run_traffic_flow",
    "time_headway",
    "tth",
]
