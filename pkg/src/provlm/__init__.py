"""Progressive coarse/fine VLM planning with dual-layer scene memory."""

__version__ = "0.1.0"

from .envelope import EnvelopeUpdateConfig, GaussianEnvelope, fit_min_envelope
from .geometry import CameraIntrinsics, Observation, RigidTransform
from .partition import Zone, ZoneConfig
from .planner import PlannerConfig, mode_select, run
from .scenario import Scenario, load_scenario
from .scene_graph import SceneGraph, normalized_distance, validate_geometry
from .task_memory import TaskMemory, init_from_plan

__all__ = [
    "CameraIntrinsics",
    "EnvelopeUpdateConfig",
    "GaussianEnvelope",
    "Observation",
    "PlannerConfig",
    "RigidTransform",
    "Scenario",
    "SceneGraph",
    "TaskMemory",
    "Zone",
    "ZoneConfig",
    "fit_min_envelope",
    "init_from_plan",
    "load_scenario",
    "mode_select",
    "normalized_distance",
    "run",
    "validate_geometry",
]
