"""Request/response schemas for the HTTP service.

Heights cross the wire in millimeters and volumes in milliliters (the units
people reason in); geometry stays in meters inside the core library.
"""

from __future__ import annotations

from typing import Optional, Union

from pydantic import BaseModel, Field


class LiquidModel(BaseModel):
    name: str = "custom"
    opacity: str = Field(description="'opaque' or 'transparent'")
    n_l: Optional[float] = None
    surface_noise_scale: float = 1.0


class CupModel(BaseModel):
    name: str = "custom"
    inner_radius: float = Field(gt=0, description="m")
    height: float = Field(gt=0, description="m")


class BottleModel(BaseModel):
    name: str = "custom"
    opening_diameter: float = Field(gt=0, description="m")
    capacity: float = Field(default=750.0, gt=0, description="ml")


class FilterOverrides(BaseModel):
    q: Optional[float] = None
    r: Optional[float] = None
    dt_default: Optional[float] = None


class ControllerOverrides(BaseModel):
    kp: Optional[float] = None
    max_angle: Optional[float] = None
    min_angle: Optional[float] = None
    max_rate: Optional[float] = None
    stale_timeout: Optional[float] = None
    slow_rate: Optional[float] = None
    return_rate: Optional[float] = None
    stop_epsilon: Optional[float] = None


class SensorOverrides(BaseModel):
    point_density: Optional[float] = None
    sigma_point: Optional[float] = None
    frame_rate: Optional[float] = None
    latency: Optional[float] = None
    horizontal_offset: Optional[float] = None
    vertical_offset: Optional[float] = None
    table_patch: Optional[float] = None


class ConfigOverrides(BaseModel):
    filter: Optional[FilterOverrides] = None
    controller: Optional[ControllerOverrides] = None
    sensor: Optional[SensorOverrides] = None
    sigma_r: Optional[float] = None
    diameter_scale: Optional[float] = None
    plane_margin: Optional[float] = None
    max_sim_time: Optional[float] = None


class SimulateRequest(BaseModel):
    liquid: Union[str, LiquidModel]
    cup: Union[str, CupModel] = "blue"
    bottle: Union[str, BottleModel] = "small"
    initial_volume_ml: float = Field(gt=0)
    target_mm: float
    prefill_mm: float = 0.0
    seed: int = 0
    config: Optional[ConfigOverrides] = None


class CommandModel(BaseModel):
    timestamp: float
    phase: str
    wrist_angle_rad: float


class TrialResultModel(BaseModel):
    final_height_mm: float
    target_mm: float
    error_mm: float
    overshoot_mm: float
    duration_s: float
    phases: list[str]
    commands: list[CommandModel]


class ExperimentRequest(BaseModel):
    family: str
    trials_per_group: int = Field(default=10, ge=1)
    seed: int = 20
    config: Optional[ConfigOverrides] = None


class TrialRowModel(BaseModel):
    trial: int
    family: str
    group: str
    liquid: str
    cup: str
    bottle: str
    init_volume_ml: float
    prefill_mm: float
    target_mm: float
    achieved_mm: Optional[float]
    error_mm: Optional[float]
    error_ml: Optional[float]
    duration_s: float
    seed: int
    timed_out: bool


class SummaryModel(BaseModel):
    group: str
    count: int
    timeouts: int
    mean_signed_error_mm: Optional[float]
    mean_abs_error_mm: Optional[float]
    std_error_mm: Optional[float]
    max_abs_error_mm: Optional[float]
    mean_abs_error_ml: Optional[float]


class ExperimentResultModel(BaseModel):
    family: str
    seed: int
    rows: list[TrialRowModel]
    summaries: list[SummaryModel]
    csv: str


class EstimateRequest(BaseModel):
    cloud_text: str = Field(description="point-cloud file content, POINTS format")
    liquid: Union[str, LiquidModel]
    config: Optional[ConfigOverrides] = None


class EstimateResponse(BaseModel):
    plane_normal: tuple[float, float, float]
    plane_offset_m: float
    cylinder_radius_mm: float
    cylinder_height_mm: float
    raw_height_mm: float
    alpha_rad: float
    point_count: int
    corrected_height_mm: float
    sigma_mm: float
    source: str
    report: str


class PresetsResponse(BaseModel):
    liquids: list[LiquidModel]
    cups: list[CupModel]
    bottles: list[BottleModel]


class HealthResponse(BaseModel):
    status: str
    version: str
