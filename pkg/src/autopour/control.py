"""Pour controller: proportional control plus the three safety policies.

The controller turns tracked height estimates into wrist rotation angles.
Plain proportional control on the height error is enough for the task, but
three policies wrap it:

  * no liquid detected      -> keep tilting, slowly (the cup may be empty or
                               the surface briefly invisible),
  * estimates gone stale    -> hold the angle exactly rather than pour blind,
  * target height reached   -> rotate back to the home angle and finish.

Once the controller starts returning it never pours again; Done is absorbing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .errors import InvalidTarget
from .tracking import FilterState, TrackedState

# Angle-equality slack for the Returning -> Done transition, radians.
_ANGLE_EPS = 1e-12


class ControllerPhase(enum.Enum):
    POURING = "Pouring"
    SLOWED_NO_DETECTION = "SlowedNoDetection"
    HOLD_STALE = "HoldStale"
    RETURNING = "Returning"
    DONE = "Done"


@dataclass(frozen=True)
class ControllerConfig:
    kp: float = 8.0              # rad per meter of height error
    max_angle: float = 1.6       # rad
    min_angle: float = 0.0       # rad, home angle
    max_rate: float = 0.3        # rad/s slew limit while pouring
    stale_timeout: float = 0.25  # s without an update before holding
    slow_rate: float = 0.02      # rad/s advance when no liquid is detected
    return_rate: float = 1.0     # rad/s rotate-back speed
    stop_epsilon: float = 0.0    # m, stop margin below target

    def __post_init__(self) -> None:
        if self.kp <= 0.0:
            raise ValueError("kp must be positive")
        if self.min_angle >= self.max_angle:
            raise ValueError("min_angle must be below max_angle")
        if min(self.max_rate, self.slow_rate, self.return_rate) <= 0.0:
            raise ValueError("all rates must be positive")
        if self.stale_timeout <= 0.0:
            raise ValueError("stale_timeout must be positive")
        if self.stop_epsilon < 0.0:
            raise ValueError("stop_epsilon must be non-negative")


@dataclass(frozen=True)
class PourCommand:
    wrist_angle: float
    phase: ControllerPhase
    timestamp: float


@dataclass(frozen=True)
class Estimate:
    """Fresh tracked height delivered to the controller."""

    state: FilterState


@dataclass(frozen=True)
class NoLiquid:
    """Perception ran but found no liquid surface."""


@dataclass(frozen=True)
class Stale:
    """No perception output within the stale timeout."""


Observation = Union[Estimate, NoLiquid, Stale]


class PourController:
    """Stateful wrist-angle controller; one instance per pour."""

    def __init__(self, cfg: ControllerConfig = ControllerConfig()):
        self.cfg = cfg
        self._angle = cfg.min_angle
        self._phase = ControllerPhase.POURING
        self._last_time: Optional[float] = None

    @property
    def phase(self) -> ControllerPhase:
        return self._phase

    def step(self, observation: Observation, target_h: float, now: float) -> PourCommand:
        """Advance the controller by one observation.

        Args:
            observation: Estimate, NoLiquid, or Stale.
            target_h: desired liquid height, meters, must be positive.
            now: current time, seconds; non-decreasing across calls.

        Returns:
            The wrist command for this instant.

        Raises:
            InvalidTarget: target_h is not positive.
        """
        if target_h <= 0.0:
            raise InvalidTarget(f"target height must be positive, got {target_h}")
        if self._last_time is not None and now < self._last_time:
            raise ValueError(f"now={now} precedes previous step at {self._last_time}")
        dt = 0.0 if self._last_time is None else now - self._last_time
        self._last_time = now
        cfg = self.cfg

        if self._phase is ControllerPhase.DONE:
            return self._emit(now)

        if self._phase is ControllerPhase.RETURNING:
            if self._angle <= cfg.min_angle + _ANGLE_EPS:
                self._angle = cfg.min_angle
                self._phase = ControllerPhase.DONE
            else:
                self._angle = max(cfg.min_angle, self._angle - cfg.return_rate * dt)
            return self._emit(now)

        if isinstance(observation, Estimate):
            h = observation.state.h
            if h >= target_h - cfg.stop_epsilon:
                self._phase = ControllerPhase.RETURNING
                self._angle = max(cfg.min_angle, self._angle - cfg.return_rate * dt)
            else:
                self._phase = ControllerPhase.POURING
                desired = cfg.min_angle + cfg.kp * (target_h - h)
                desired = min(max(desired, cfg.min_angle), cfg.max_angle)
                # Advance only: backing off mid-pour would fight the slew
                # limit without reducing what has already been poured.
                step_up = min(max(desired - self._angle, 0.0), cfg.max_rate * dt)
                self._angle = min(cfg.max_angle, self._angle + step_up)
        elif isinstance(observation, NoLiquid):
            self._phase = ControllerPhase.SLOWED_NO_DETECTION
            rate = min(cfg.slow_rate, cfg.max_rate)
            self._angle = min(cfg.max_angle, self._angle + rate * dt)
        elif isinstance(observation, Stale):
            self._phase = ControllerPhase.HOLD_STALE
        else:
            raise TypeError(f"unknown observation type {type(observation)!r}")
        return self._emit(now)

    def _emit(self, now: float) -> PourCommand:
        return PourCommand(wrist_angle=self._angle, phase=self._phase, timestamp=now)


@dataclass(frozen=True)
class LoopSummary:
    final_estimate: Optional[float]
    commands_issued: int
    time_to_done: Optional[float]
    completed: bool


def run_loop(
    stream: Iterable[TrackedState],
    target_h: float,
    cfg: ControllerConfig = ControllerConfig(),
) -> tuple[list[PourCommand], LoopSummary]:
    """Drive a controller over a tracker output stream until Done.

    Unmeasured tracker states map to NoLiquid while recent, and to Stale once
    the last real measurement is older than the stale timeout.
    """
    controller = PourController(cfg)
    commands: list[PourCommand] = []
    last_measured: Optional[float] = None
    final_estimate: Optional[float] = None
    first_time: Optional[float] = None
    done_time: Optional[float] = None

    for item in stream:
        now = item.state.last_update
        if item.measured:
            last_measured = now
            final_estimate = item.state.h
            observation: Observation = Estimate(item.state)
        elif last_measured is None or now - last_measured > cfg.stale_timeout:
            observation = Stale()
        else:
            observation = NoLiquid()
        command = controller.step(observation, target_h, now)
        commands.append(command)
        if first_time is None:
            first_time = now
        if command.phase is ControllerPhase.DONE:
            done_time = now
            break

    completed = done_time is not None
    time_to_done = (done_time - first_time) if completed else None
    return commands, LoopSummary(
        final_estimate=final_estimate,
        commands_issued=len(commands),
        time_to_done=time_to_done,
        completed=completed,
    )


def commands_to_csv(commands: Iterable[PourCommand]) -> str:
    """Render a command log as CSV: timestamp,phase,wrist_angle_rad."""
    lines = ["timestamp,phase,wrist_angle_rad"]
    for c in commands:
        lines.append(f"{c.timestamp:.6f},{c.phase.value},{c.wrist_angle:.9f}")
    return "\n".join(lines) + "\n"
