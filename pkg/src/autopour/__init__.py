"""Closed-loop robot pouring: depth-based height sensing with refraction
correction, Kalman tracking, a policy-augmented pour controller, and a
deterministic simulator with an experiment harness on top."""

__version__ = "0.1.0"

from .control import ControllerConfig, ControllerPhase, PourCommand, PourController
from .geometry import CylinderModel, PlaneModel, PointCloud, RawHeightMeasurement
from .optics import HeightEstimate, LiquidSpec, Opacity, correct_height, correction_factor
from .sim import (
    BottleSpec,
    CupSpec,
    LoopConfig,
    Scenario,
    SensorModel,
    TrialResult,
    WorldState,
    render_cloud,
    run_closed_loop,
    step_world,
)
from .tracking import FilterParams, FilterState, init_state, predict, track, update

__all__ = [
    "BottleSpec",
    "ControllerConfig",
    "ControllerPhase",
    "CupSpec",
    "CylinderModel",
    "FilterParams",
    "FilterState",
    "HeightEstimate",
    "LiquidSpec",
    "LoopConfig",
    "Opacity",
    "PlaneModel",
    "PointCloud",
    "PourCommand",
    "PourController",
    "RawHeightMeasurement",
    "Scenario",
    "SensorModel",
    "TrialResult",
    "WorldState",
    "correct_height",
    "correction_factor",
    "init_state",
    "predict",
    "render_cloud",
    "run_closed_loop",
    "step_world",
    "track",
    "update",
    "__version__",
]
