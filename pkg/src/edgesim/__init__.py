"""Cycle-accurate simulator for online DAG task scheduling on IoT/MEC/Cloud fleets."""

from .churn import ChurnConfig, ChurnDirective, ChurnEvent, ChurnHistory, churn_sweep
from .dataflow import GraphIndex, WindowConfig, WorkloadCursor, filter_ready, next_window, prioritize
from .datagen import GenConfig, export_csv, generate, generate_applications, generate_devices, load_csv
from .engine import CycleReport, EngineConfig, Environment, EventLog, init
from .metrics import MetricsStore, energy_total, export_metrics, makespan, plot_data
from .model import (
    ApplicationSpec,
    Assignment,
    CoreState,
    DeviceSpec,
    SimState,
    TaskSpec,
    Tier,
    topological_order,
    validate_application,
)
from .scheduling import AgentPool, RewardWeights, Scheduler, make_scheduler, register

__version__ = "0.1.0"
