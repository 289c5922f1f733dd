"""Hazard-aware trajectory refinement from roadside-unit alerts.

Raw scenario data is filtered into a compact context, rendered as text and
bird's-eye-view prompts, sent to a planner backend, and the returned
per-waypoint residuals are added to the nominal route.
"""

from .harness import RunResult, ScenarioProfile, evaluate, generate_scenario, ground_truth_plan, run_pipeline
from .planner import BackendConfig, ResidualSet
from .rtf import OptimizedPlan, apply_residuals
from .scenario import HazardAlert, NavigationPlan, Scenario, Trajectory, VehicleState
from .structuring import ContextPackage, ValidationConfig, build_context

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "ContextPackage",
    "HazardAlert",
    "NavigationPlan",
    "OptimizedPlan",
    "ResidualSet",
    "RunResult",
    "Scenario",
    "ScenarioProfile",
    "Trajectory",
    "ValidationConfig",
    "VehicleState",
    "apply_residuals",
    "build_context",
    "evaluate",
    "generate_scenario",
    "ground_truth_plan",
    "run_pipeline",
]
