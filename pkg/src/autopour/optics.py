"""Refraction correction for depth-sensed liquid heights.

A depth camera measures the level of a transparent liquid too low: the
projector ray bends at the surface and the sensor effectively ranges the
refracted cup bottom.  For a liquid of refractive index n observed at
incidence angle alpha, the true height h relates to the raw height h_r by

    h = s / (s - cos(alpha)) * h_r,   s = sqrt(n^2 - 1 + cos(alpha)^2)

which at normal incidence reduces to h = n / (n - 1) * h_r (about 4.03x for
water).  Opaque liquids reflect at the surface, so their raw height is
already the true height.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import yaml

from .errors import InvalidRefractiveIndex, ParseError
from .geometry import RawHeightMeasurement

# Default raw-measurement noise floor (std, meters) used to propagate a
# variance with each estimate; matches the spread of the per-frame surface
# average on a static scene.
DEFAULT_SIGMA_R = 0.0002


class Opacity(enum.Enum):
    TRANSPARENT = "transparent"
    OPAQUE = "opaque"


class EstimateSource(enum.Enum):
    DIRECT = "direct"
    CORRECTED = "corrected"


@dataclass(frozen=True)
class LiquidSpec:
    """Optical description of a pourable liquid.

    ``surface_noise_scale`` is a simulation-only multiplier for surface point
    noise (carbonation roughens the surface); it does not affect correction.
    """

    name: str
    opacity: Opacity
    n_l: float | None = None
    surface_noise_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.opacity is Opacity.TRANSPARENT:
            if self.n_l is None or self.n_l <= 1.0:
                raise InvalidRefractiveIndex(
                    f"transparent liquid {self.name!r} needs n_l > 1, got {self.n_l}"
                )
        if self.surface_noise_scale < 1.0:
            raise ValueError("surface_noise_scale must be >= 1")


@dataclass(frozen=True)
class HeightEstimate:
    """Liquid height above the inner cup bottom, meters, with variance."""

    h: float
    variance: float
    timestamp: float
    source: EstimateSource

    def __post_init__(self) -> None:
        if self.h < 0.0:
            raise ValueError(f"height must be non-negative, got {self.h}")
        if self.variance <= 0.0:
            raise ValueError(f"variance must be positive, got {self.variance}")


def correction_factor(n_l: float, alpha: float) -> float:
    """Multiplier turning a raw (apparent) height into the true height.

    Args:
        n_l: refractive index of the liquid, must exceed 1.
        alpha: incidence angle in radians, in [0, pi/2).

    The factor is always > 1, decreases with alpha, and decreases with n_l.
    """
    if n_l <= 1.0:
        raise InvalidRefractiveIndex(f"refractive index must exceed 1, got {n_l}")
    if not 0.0 <= alpha < math.pi / 2:
        raise ValueError(f"alpha must be in [0, pi/2), got {alpha}")
    cos_a = math.cos(alpha)
    s = math.sqrt(n_l * n_l - 1.0 + cos_a * cos_a)
    return s / (s - cos_a)


def correct_height(
    raw: RawHeightMeasurement, liquid: LiquidSpec, sigma_r: float = DEFAULT_SIGMA_R
) -> HeightEstimate:
    """Turn a raw height measurement into a height estimate for a liquid.

    Opaque liquids pass through unchanged (source DIRECT).  Transparent
    liquids are scaled by ``correction_factor`` (source CORRECTED); the
    variance is magnified by the factor squared, which is what makes
    transparent estimates inherently noisier.
    """
    if sigma_r <= 0.0:
        raise ValueError("sigma_r must be positive")
    if liquid.opacity is Opacity.OPAQUE:
        return HeightEstimate(
            h=raw.h_r,
            variance=sigma_r * sigma_r,
            timestamp=raw.timestamp,
            source=EstimateSource.DIRECT,
        )
    factor = correction_factor(liquid.n_l, raw.alpha)
    return HeightEstimate(
        h=factor * raw.h_r,
        variance=factor * factor * sigma_r * sigma_r,
        timestamp=raw.timestamp,
        source=EstimateSource.CORRECTED,
    )


LIQUID_PRESETS: dict[str, LiquidSpec] = {
    "water": LiquidSpec("water", Opacity.TRANSPARENT, n_l=1.333),
    "carbonated_water": LiquidSpec(
        "carbonated_water", Opacity.TRANSPARENT, n_l=1.333, surface_noise_scale=2.0
    ),
    "olive_oil": LiquidSpec("olive_oil", Opacity.TRANSPARENT, n_l=1.47),
    "milk": LiquidSpec("milk", Opacity.OPAQUE),
    "orange_juice": LiquidSpec("orange_juice", Opacity.OPAQUE),
}


def get_liquid(name: str) -> LiquidSpec:
    """Look up a liquid preset by name."""
    try:
        return LIQUID_PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(LIQUID_PRESETS))
        raise KeyError(f"unknown liquid {name!r}; presets: {known}") from None


def load_liquid_file(path: str) -> LiquidSpec:
    """Read a liquid spec from a YAML file with keys name, opacity, and
    optionally n_l and surface_noise_scale."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ParseError(f"bad liquid file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ParseError(f"liquid file {path} must contain a mapping")
    try:
        opacity = Opacity(data["opacity"])
        return LiquidSpec(
            name=str(data["name"]),
            opacity=opacity,
            n_l=data.get("n_l"),
            surface_noise_scale=float(data.get("surface_noise_scale", 1.0)),
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad liquid file {path}: {exc}") from None
