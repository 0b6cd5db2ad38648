"""Constant-velocity Kalman filter over liquid height.

State is x = [h, h_dot]: the liquid height and the fill rate.  Only the
height is observed (H = [1, 0]); the rate is inferred.  The motion model has
no control input — the pour rate reaches the state only through the
measurements.  Process noise uses the white-acceleration discretization
Q = q * [[dt^3/3, dt^2/2], [dt^2/2, dt]].

Covariance math is done on the three unique entries (p00, p01, p11) with a
Joseph-form update, so P stays exactly symmetric and cannot drift indefinite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

import numpy as np

from .errors import InvalidDt, NonMonotonicTimestamp
from .optics import HeightEstimate

# Initial rate uncertainty: a pour can start anywhere up to tens of mm/s.
INIT_RATE_SIGMA = 0.05  # m/s


@dataclass(frozen=True)
class FilterParams:
    q: float = 1e-6      # process noise spectral density, m^2/s^3
    r: float = 2.5e-7    # fallback measurement variance, m^2 (0.5 mm std)
    dt_default: float = 1.0 / 30.0

    def __post_init__(self) -> None:
        if self.q <= 0.0 or self.r <= 0.0 or self.dt_default <= 0.0:
            raise ValueError("q, r, dt_default must all be positive")


@dataclass(frozen=True)
class FilterState:
    h: float
    h_dot: float
    P: np.ndarray
    last_update: float

    def __post_init__(self) -> None:
        p = np.asarray(self.P, dtype=float)
        if p.shape != (2, 2):
            raise ValueError(f"P must be 2x2, got {p.shape}")
        if abs(p[0, 1] - p[1, 0]) > 1e-12:
            raise ValueError("P must be symmetric")
        trace = p[0, 0] + p[1, 1]
        det = p[0, 0] * p[1, 1] - p[0, 1] * p[1, 0]
        eig_min = 0.5 * (trace - math.sqrt(max(trace * trace - 4.0 * det, 0.0)))
        if eig_min < -1e-12:
            raise ValueError(f"P must be positive semi-definite, min eigenvalue {eig_min}")
        object.__setattr__(self, "P", p)


@dataclass(frozen=True)
class GapFrame:
    """Placeholder in a measurement stream for a frame with no detection."""

    timestamp: float


@dataclass(frozen=True)
class TrackedState:
    """One tracker output: the filter state and whether it saw a measurement."""

    state: FilterState
    measured: bool


def _make_state(h: float, h_dot: float, p00: float, p01: float, p11: float,
                t: float) -> FilterState:
    return FilterState(
        h=h, h_dot=h_dot, P=np.array([[p00, p01], [p01, p11]]), last_update=t
    )


def init_state(z: HeightEstimate, params: FilterParams) -> FilterState:
    """Seed the filter from the first measurement: height from z with the
    configured measurement variance, rate at zero with a wide prior."""
    return _make_state(
        z.h, 0.0, params.r, 0.0, INIT_RATE_SIGMA * INIT_RATE_SIGMA, z.timestamp
    )


def predict(state: FilterState, dt: float, params: FilterParams) -> FilterState:
    """Propagate the constant-velocity model by dt seconds.

    Raises:
        InvalidDt: dt is zero or negative.
    """
    if dt <= 0.0:
        raise InvalidDt(f"dt must be positive, got {dt}")
    p00 = float(state.P[0, 0])
    p01 = float(state.P[0, 1])
    p11 = float(state.P[1, 1])
    q = params.q
    h = state.h + dt * state.h_dot
    n00 = p00 + dt * (2.0 * p01 + dt * p11) + q * dt * dt * dt / 3.0
    n01 = p01 + dt * p11 + q * dt * dt / 2.0
    n11 = p11 + q * dt
    return _make_state(h, state.h_dot, n00, n01, n11, state.last_update + dt)


def update(state: FilterState, z: HeightEstimate, params: FilterParams) -> FilterState:
    """Fold one height measurement into the state (H = [1, 0]).

    The measurement variance comes from the estimate itself when present, so
    refraction-corrected estimates naturally carry their magnified noise;
    ``params.r`` is the fallback.  Joseph-form covariance update keeps P
    symmetric positive semi-definite.
    """
    r = z.variance if z.variance > 0.0 else params.r
    p00 = float(state.P[0, 0])
    p01 = float(state.P[0, 1])
    p11 = float(state.P[1, 1])
    s = p00 + r
    k0 = p00 / s
    k1 = p01 / s
    innovation = z.h - state.h
    h = state.h + k0 * innovation
    h_dot = state.h_dot + k1 * innovation
    one_m_k0 = 1.0 - k0
    n00 = one_m_k0 * one_m_k0 * p00 + k0 * k0 * r
    n01 = one_m_k0 * (p01 - k1 * p00) + k0 * k1 * r
    n11 = p11 - 2.0 * k1 * p01 + k1 * k1 * p00 + k1 * k1 * r
    return _make_state(h, h_dot, n00, n01, n11, state.last_update)


def track(
    stream: Iterable[Union[HeightEstimate, GapFrame]],
    params: FilterParams = FilterParams(),
) -> Iterator[TrackedState]:
    """Run the filter over a time-ordered stream of estimates and gaps.

    Each estimate triggers a predict over the actual inter-measurement
    interval followed by an update.  Gap frames (no liquid detected) advance
    the prediction only and are flagged unmeasured.  Items before the first
    real measurement are dropped — there is nothing to predict from.

    Raises:
        NonMonotonicTimestamp: an item's timestamp goes backwards.
    """
    state: FilterState | None = None
    for item in stream:
        t = item.timestamp
        if state is None:
            if isinstance(item, GapFrame):
                continue
            state = init_state(item, params)
            yield TrackedState(state=state, measured=True)
            continue
        dt = t - state.last_update
        if dt < 0.0:
            raise NonMonotonicTimestamp(
                f"timestamp {t} precedes previous {state.last_update}"
            )
        if dt > 0.0:
            state = predict(state, dt, params)
        if isinstance(item, GapFrame):
            yield TrackedState(state=state, measured=False)
        else:
            state = update(state, item, params)
            yield TrackedState(state=state, measured=True)
