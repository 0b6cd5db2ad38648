"""Deterministic closed-loop pouring world.

The world is a cup on a table, a bottle in a wrist, and a depth camera
looking down into the cup.  ``step_world`` moves liquid from bottle to cup
through a parametric outflow model driven by the wrist angle.
``render_cloud`` turns the world into a noisy synthetic depth frame: table
points, the camera-facing half of the cup wall, and the liquid surface.
Transparent liquids are rendered at their *apparent* height — the true height
shrunk by the inverse of the refraction correction — so the full perception
stack sees exactly the bias a real depth camera sees.

Everything is seeded; identical (scenario, seed) pairs produce bit-identical
trials.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import yaml

from . import control, tracking
from .control import ControllerConfig, ControllerPhase, PourController
from .errors import InvalidTarget, NoLiquidVisible, ParseError, TrialTimeout
from .geometry import (
    PointCloud,
    RansacConfig,
    extract_above_plane,
    fit_cylinder_ransac,
    fit_plane_ransac,
    measure_raw_height,
)
from .optics import DEFAULT_SIGMA_R, LiquidSpec, Opacity, correct_height, correction_factor, get_liquid
from .tracking import FilterParams

ML_PER_M3 = 1e6

# Outflow model constants.  The paper only lists the dependencies (tilt,
# remaining volume, opening); the shape below is invented and calibrated so
# nominal trials finish in roughly 10-30 s with a few mm/s of height rise.
FLOW_C = 110.0         # ml/s at 1 rad beyond the spill threshold, reference opening
FLOW_P = 1.2           # tilt exponent
FLOW_TILT_CAP = 0.30   # rad, excess tilt beyond which the neck chokes the flow
OPENING_EXP = 0.5      # sublinear opening scaling: head-limited, not area-limited
SPILL_EMPTY = 0.03     # rad, spill threshold with an empty bottle
SPILL_FULL = 0.09      # rad, spill threshold with a full bottle
REF_OPENING = 0.025    # m, opening diameter the flow constant is quoted at

# While liquid is falling in, the impact churns the surface.  An opaque
# surface still reflects IR at the top, but through a transparent liquid the
# scattered light path lengthens and the depth reading dips slightly deeper
# than the static refraction model predicts.  The dent grows with the
# inflow rate and vanishes as soon as the flow stops, so static scenes are
# unaffected.
POUR_DISTURB_DEPTH = 0.0005  # m, raw-reading dent at a saturating inflow
POUR_DISTURB_SAT = 8.0       # ml/s, inflow where the dent saturates


@dataclass(frozen=True)
class CupSpec:
    inner_radius: float
    height: float
    name: str = "cup"

    def __post_init__(self) -> None:
        if self.inner_radius <= 0.0 or self.height <= 0.0:
            raise ValueError("cup radius and height must be positive")

    @property
    def ml_per_m(self) -> float:
        """Milliliters per meter of liquid height."""
        return math.pi * self.inner_radius**2 * ML_PER_M3


@dataclass(frozen=True)
class BottleSpec:
    opening_diameter: float
    capacity: float  # ml
    name: str = "bottle"

    def __post_init__(self) -> None:
        if self.opening_diameter <= 0.0 or self.capacity <= 0.0:
            raise ValueError("bottle opening and capacity must be positive")


# Cup radii follow the measured diameters of the three reference cups;
# heights are plausible desk values.
CUP_PRESETS: dict[str, CupSpec] = {
    "text": CupSpec(inner_radius=0.025, height=0.10, name="text"),
    "patterned": CupSpec(inner_radius=0.030, height=0.11, name="patterned"),
    "blue": CupSpec(inner_radius=0.0375, height=0.12, name="blue"),
}

BOTTLE_PRESETS: dict[str, BottleSpec] = {
    "small": BottleSpec(opening_diameter=0.025, capacity=750.0, name="small"),
    "wide": BottleSpec(opening_diameter=0.045, capacity=750.0, name="wide"),
}


def get_cup(name: str) -> CupSpec:
    try:
        return CUP_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown cup {name!r}; presets: {', '.join(sorted(CUP_PRESETS))}") from None


def get_bottle(name: str) -> BottleSpec:
    try:
        return BOTTLE_PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown bottle {name!r}; presets: {', '.join(sorted(BOTTLE_PRESETS))}"
        ) from None


@dataclass(frozen=True)
class WorldState:
    liquid: LiquidSpec
    cup: CupSpec
    bottle: BottleSpec
    bottle_volume: float  # ml
    cup_height: float     # m, true liquid height above the inner bottom
    wrist_angle: float    # rad
    time: float           # s

    def __post_init__(self) -> None:
        if self.bottle_volume < -1e-9:
            raise ValueError("bottle volume must be non-negative")
        if not -1e-12 <= self.cup_height <= self.cup.height + 1e-12:
            raise ValueError("cup height out of range")

    @property
    def cup_volume(self) -> float:
        """Liquid volume in the cup, ml."""
        return self.cup_height * self.cup.ml_per_m


@dataclass(frozen=True)
class SensorModel:
    """Synthetic depth camera: sampling density, noise, timing, and pose.

    The camera sits at the origin looking at the cup bottom, which is
    ``horizontal_offset`` meters away horizontally and ``vertical_offset``
    meters below — close enough overhead to see into the cup.
    """

    point_density: float = 53000.0  # points per m^2 of surface
    sigma_point: float = 0.0018     # m, per-point depth noise along the ray
    frame_rate: float = 30.0        # Hz
    latency: float = 0.2            # s, perception transport delay
    horizontal_offset: float = 0.25
    vertical_offset: float = 0.75
    table_patch: float = 0.30       # m, rendered table square side

    def __post_init__(self) -> None:
        if min(self.point_density, self.frame_rate, self.horizontal_offset,
               self.vertical_offset, self.table_patch) <= 0.0:
            raise ValueError("sensor parameters must be positive")
        if self.sigma_point < 0.0 or self.latency < 0.0:
            raise ValueError("sigma_point and latency must be non-negative")

    def camera_rotation(self) -> np.ndarray:
        """World-to-camera rotation: z along the optical axis (toward the
        cup bottom), y down in the image, x to the right."""
        target = np.array([self.horizontal_offset, 0.0, -self.vertical_offset])
        z_axis = target / np.linalg.norm(target)
        x_axis = np.cross(z_axis, np.array([0.0, 0.0, 1.0]))
        x_axis = x_axis / np.linalg.norm(x_axis)
        y_axis = np.cross(z_axis, x_axis)
        return np.vstack([x_axis, y_axis, z_axis])


def spill_threshold(bottle: BottleSpec, bottle_volume: float) -> float:
    """Tilt angle where flow begins; eases off as the bottle empties."""
    fill = min(max(bottle_volume / bottle.capacity, 0.0), 1.0)
    return SPILL_EMPTY + (SPILL_FULL - SPILL_EMPTY) * fill


def outflow_rate(bottle: BottleSpec, bottle_volume: float, tilt: float) -> float:
    """Bottle outflow in ml/s for a given tilt.

    Monotone in tilt beyond the spill threshold, in the opening diameter,
    and (through the threshold) in the remaining volume; zero when the
    bottle is empty or the tilt is below threshold.
    """
    if bottle_volume <= 0.0:
        return 0.0
    excess = tilt - spill_threshold(bottle, bottle_volume)
    if excess <= 0.0:
        return 0.0
    excess = min(excess, FLOW_TILT_CAP)
    opening = (bottle.opening_diameter / REF_OPENING) ** OPENING_EXP
    return FLOW_C * opening * excess**FLOW_P


def step_world(state: WorldState, wrist_angle: float, dt: float) -> WorldState:
    """Advance the world by dt seconds at the given wrist angle.

    All outflow lands in the cup (no spill), so volume is conserved exactly;
    flow stops at an empty bottle or a full cup.
    """
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    flow = outflow_rate(state.bottle, state.bottle_volume, wrist_angle)
    room = (state.cup.height - state.cup_height) * state.cup.ml_per_m
    poured = min(flow * dt, state.bottle_volume, max(room, 0.0))
    return replace(
        state,
        bottle_volume=state.bottle_volume - poured,
        cup_height=state.cup_height + poured / state.cup.ml_per_m,
        wrist_angle=wrist_angle,
        time=state.time + dt,
    )


def _incidence_angle(horizontal: float, drop: float) -> float:
    """Angle between the camera ray to a surface point and vertical, for a
    point ``horizontal`` meters out and ``drop`` meters below the camera."""
    return math.atan2(horizontal, drop)


def apparent_height(state: WorldState, sensor: SensorModel) -> float:
    """Height at which the camera perceives the liquid surface.

    Opaque liquids read true.  Transparent liquids read low by the
    refraction correction factor; since the factor itself depends on the
    incidence angle at the *apparent* surface, the value is solved as a
    fixed point (converges in a few iterations — the factor varies slowly).
    """
    h = state.cup_height
    if state.liquid.opacity is Opacity.OPAQUE or h <= 0.0:
        return h
    n_l = state.liquid.n_l
    h_app = h * (n_l - 1.0) / n_l
    for _ in range(25):
        alpha = _incidence_angle(
            sensor.horizontal_offset, sensor.vertical_offset - h_app
        )
        h_app = h / correction_factor(n_l, alpha)
    return h_app


def render_cloud(state: WorldState, sensor: SensorModel, rng_seed) -> PointCloud:
    """Render one synthetic depth frame of the scene, camera frame, meters.

    Emits the table patch (minus the cup footprint), the camera-facing half
    of the cup wall, and the liquid surface at its apparent height (the cup
    bottom when empty).  Per-point Gaussian noise acts along the viewing
    ray; surface points get the liquid's surface_noise_scale on top.
    """
    rng = np.random.default_rng(rng_seed)
    cup = state.cup
    r = cup.inner_radius
    center = np.array([sensor.horizontal_offset, 0.0])
    table_z = -sensor.vertical_offset

    # Table patch, cup footprint removed.
    n_table = int(round(sensor.point_density * sensor.table_patch**2))
    xy = center + rng.uniform(
        -sensor.table_patch / 2.0, sensor.table_patch / 2.0, size=(n_table, 2)
    )
    xy = xy[np.linalg.norm(xy - center, axis=1) > r]
    table = np.column_stack([xy, np.full(len(xy), table_z)])

    # Camera-facing half of the cup wall, table to rim.
    n_wall = int(round(sensor.point_density * math.pi * r * cup.height))
    phi = math.pi + rng.uniform(-math.pi / 2.0, math.pi / 2.0, size=n_wall)
    wall_z = table_z + rng.uniform(0.0, cup.height, size=n_wall)
    wall = np.column_stack(
        [center[0] + r * np.cos(phi), center[1] + r * np.sin(phi), wall_z]
    )

    # Liquid surface (or bare cup bottom) as a full disk.
    h_app = apparent_height(state, sensor)
    if state.liquid.opacity is Opacity.TRANSPARENT and state.cup_height > 0.0:
        inflow = outflow_rate(state.bottle, state.bottle_volume, state.wrist_angle)
        if inflow > 0.0:
            dent = POUR_DISTURB_DEPTH * min(inflow / POUR_DISTURB_SAT, 1.0)
            h_app = max(h_app - dent, 0.0)
    n_surf = int(round(sensor.point_density * math.pi * r * r))
    rad = r * np.sqrt(rng.uniform(0.0, 1.0, size=n_surf))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n_surf)
    surface = np.column_stack(
        [
            center[0] + rad * np.cos(theta),
            center[1] + rad * np.sin(theta),
            np.full(n_surf, table_z + h_app),
        ]
    )

    points = np.vstack([table, wall, surface])
    if sensor.sigma_point > 0.0:
        sigma = np.full(len(points), sensor.sigma_point)
        sigma[len(table) + len(wall):] *= state.liquid.surface_noise_scale
        rays = points / np.linalg.norm(points, axis=1, keepdims=True)
        points = points + (rng.standard_normal(len(points)) * sigma)[:, None] * rays

    cam = points @ sensor.camera_rotation().T
    return PointCloud(points=cam, frame_id=0, timestamp=state.time)


@dataclass(frozen=True)
class Scenario:
    liquid: LiquidSpec
    cup: CupSpec
    bottle: BottleSpec
    initial_volume_ml: float
    target_mm: float
    prefill_mm: float = 0.0

    def __post_init__(self) -> None:
        if self.initial_volume_ml <= 0.0:
            raise ValueError("initial volume must be positive")
        if self.prefill_mm < 0.0:
            raise ValueError("prefill must be non-negative")


@dataclass(frozen=True)
class LoopConfig:
    sensor: SensorModel = field(default_factory=SensorModel)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    filter_params: FilterParams = field(default_factory=FilterParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    diameter_scale: float = 0.8
    sigma_r: float = DEFAULT_SIGMA_R
    plane_margin: float = 0.006
    max_sim_time: float = 60.0


@dataclass(frozen=True)
class TrialResult:
    final_height: float          # m, true liquid height at Done
    target: float                # m
    error: float                 # m, signed (final - target)
    overshoot: float             # m, positive part of the error
    duration: float              # s, simulated time to Done
    phases: tuple[str, ...]      # controller phases in visit order
    commands: tuple[control.PourCommand, ...] = ()  # full wrist command log


def run_closed_loop(
    scenario: Scenario, seed: int, config: LoopConfig = LoopConfig()
) -> TrialResult:
    """Run one full pour: render, estimate, track, command, repeat.

    The table and cup are fitted once on the first frame (the cup does not
    move); the liquid height is re-measured every frame.  Height estimates
    reach the controller only after the sensor latency.

    Raises:
        InvalidTarget: target outside (0, cup.height].
        TrialTimeout: the controller did not reach Done in time.
    """
    target = scenario.target_mm / 1000.0
    prefill = scenario.prefill_mm / 1000.0
    if target <= 0.0 or target > scenario.cup.height:
        raise InvalidTarget(
            f"target {scenario.target_mm} mm outside (0, {scenario.cup.height * 1000}] mm"
        )
    if prefill >= target:
        raise InvalidTarget("prefill must sit below the target height")

    sensor = config.sensor
    dt = 1.0 / sensor.frame_rate
    world = WorldState(
        liquid=scenario.liquid,
        cup=scenario.cup,
        bottle=scenario.bottle,
        bottle_volume=scenario.initial_volume_ml,
        cup_height=prefill,
        wrist_angle=config.controller.min_angle,
        time=0.0,
    )
    controller = PourController(config.controller)
    filter_state: Optional[tracking.FilterState] = None
    pending: deque[tuple[float, object]] = deque()  # (deliver_at, estimate or gap time)
    table = None
    cup_model = None
    last_measured: Optional[float] = None
    phases: list[str] = []
    commands: list[control.PourCommand] = []
    max_frames = int(config.max_sim_time * sensor.frame_rate)

    for frame in range(max_frames + 1):
        now = frame * dt
        cloud = render_cloud(world, sensor, rng_seed=[seed, frame])
        cloud = PointCloud(points=cloud.points, frame_id=frame, timestamp=now)

        if table is None:
            table = fit_plane_ransac(cloud, config.ransac)
            above = extract_above_plane(cloud, table, margin=config.plane_margin)
            cup_model = fit_cylinder_ransac(above, table, config.ransac)
        try:
            raw = measure_raw_height(cloud, cup_model, table, config.diameter_scale)
            estimate = correct_height(raw, scenario.liquid, config.sigma_r)
            pending.append((now + sensor.latency, estimate))
        except NoLiquidVisible:
            pending.append((now + sensor.latency, now))  # gap marker: timestamp only

        delivered_estimate = False
        delivered_gap = False
        while pending and pending[0][0] <= now:
            _, item = pending.popleft()
            if isinstance(item, float):
                if filter_state is not None and item > filter_state.last_update:
                    filter_state = tracking.predict(
                        filter_state, item - filter_state.last_update, config.filter_params
                    )
                delivered_gap = True
                continue
            if filter_state is None:
                filter_state = tracking.init_state(item, config.filter_params)
            else:
                gap = item.timestamp - filter_state.last_update
                if gap > 0.0:
                    filter_state = tracking.predict(filter_state, gap, config.filter_params)
                filter_state = tracking.update(filter_state, item, config.filter_params)
            last_measured = item.timestamp
            delivered_estimate = True

        if delivered_estimate:
            observation: control.Observation = control.Estimate(filter_state)
        elif delivered_gap:
            observation = control.NoLiquid()
        elif (
            filter_state is not None
            and last_measured is not None
            and now - last_measured <= config.controller.stale_timeout
        ):
            observation = control.Estimate(filter_state)
        else:
            observation = control.Stale()

        command = controller.step(observation, target, now)
        commands.append(command)
        if not phases or phases[-1] != command.phase.value:
            phases.append(command.phase.value)
        if command.phase is ControllerPhase.DONE:
            error = world.cup_height - target
            return TrialResult(
                final_height=world.cup_height,
                target=target,
                error=error,
                overshoot=max(error, 0.0),
                duration=now,
                phases=tuple(phases),
                commands=tuple(commands),
            )
        world = step_world(world, command.wrist_angle, dt)

    raise TrialTimeout(
        f"trial still in phase {controller.phase.value} after {config.max_sim_time} s"
    )


# ---------------------------------------------------------------------------
# Scenario files: YAML naming presets or inline specs, plus optional
# config overrides.


def _build_liquid(spec) -> LiquidSpec:
    if isinstance(spec, str):
        return get_liquid(spec)
    if isinstance(spec, dict):
        return LiquidSpec(
            name=str(spec.get("name", "custom")),
            opacity=Opacity(spec["opacity"]),
            n_l=spec.get("n_l"),
            surface_noise_scale=float(spec.get("surface_noise_scale", 1.0)),
        )
    raise ParseError(f"liquid must be a preset name or mapping, got {type(spec).__name__}")


def _build_cup(spec) -> CupSpec:
    if isinstance(spec, str):
        return get_cup(spec)
    if isinstance(spec, dict):
        return CupSpec(
            inner_radius=float(spec["inner_radius"]),
            height=float(spec["height"]),
            name=str(spec.get("name", "custom")),
        )
    raise ParseError(f"cup must be a preset name or mapping, got {type(spec).__name__}")


def _build_bottle(spec) -> BottleSpec:
    if isinstance(spec, str):
        return get_bottle(spec)
    if isinstance(spec, dict):
        return BottleSpec(
            opening_diameter=float(spec["opening_diameter"]),
            capacity=float(spec.get("capacity", 750.0)),
            name=str(spec.get("name", "custom")),
        )
    raise ParseError(f"bottle must be a preset name or mapping, got {type(spec).__name__}")


def _override(base, overrides: dict):
    try:
        return replace(base, **overrides)
    except TypeError as exc:
        raise ParseError(f"bad override for {type(base).__name__}: {exc}") from None


def load_scenario(path: str) -> tuple[Scenario, int, LoopConfig]:
    """Read a scenario file: liquid/cup/bottle (preset names or inline),
    volumes and targets, seed, and optional config overrides."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ParseError(f"bad scenario file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ParseError(f"scenario file {path} must contain a mapping")
    try:
        scenario = Scenario(
            liquid=_build_liquid(data["liquid"]),
            cup=_build_cup(data.get("cup", "blue")),
            bottle=_build_bottle(data.get("bottle", "small")),
            initial_volume_ml=float(data["initial_volume_ml"]),
            target_mm=float(data["target_mm"]),
            prefill_mm=float(data.get("prefill_mm", 0.0)),
        )
    except KeyError as exc:
        raise ParseError(f"scenario file {path} missing key {exc}") from None
    except (ValueError, TypeError) as exc:
        raise ParseError(f"bad scenario file {path}: {exc}") from None

    seed = int(data.get("seed", 0))
    config = LoopConfig()
    if "sensor" in data:
        config = replace(config, sensor=_override(config.sensor, data["sensor"]))
    if "ransac" in data:
        config = replace(config, ransac=_override(config.ransac, data["ransac"]))
    if "filter" in data:
        config = replace(config, filter_params=_override(config.filter_params, data["filter"]))
    if "controller" in data:
        config = replace(config, controller=_override(config.controller, data["controller"]))
    for key in ("diameter_scale", "sigma_r", "plane_margin", "max_sim_time"):
        if key in data:
            config = replace(config, **{key: float(data[key])})
    return scenario, seed, config
