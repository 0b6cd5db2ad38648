"""Refraction-correction tests: factor math, estimate plumbing, liquid presets."""

import math

import pytest
import yaml

from autopour.errors import InvalidRefractiveIndex, ParseError
from autopour.geometry import RawHeightMeasurement
from autopour.optics import (
    DEFAULT_SIGMA_R,
    EstimateSource,
    HeightEstimate,
    LIQUID_PRESETS,
    LiquidSpec,
    Opacity,
    correct_height,
    correction_factor,
    get_liquid,
    load_liquid_file,
)


def raw(h_r, alpha=0.0, t=0.0):
    return RawHeightMeasurement(h_r=h_r, alpha=alpha, point_count=10, timestamp=t)


def alpha_for_factor(n_l, f):
    # Invert f = s/(s - cos a), s = sqrt(n^2 - 1 + cos^2 a):
    # cos^2 a = (n^2 - 1)(f - 1)^2 / (2f - 1)
    c = math.sqrt((n_l * n_l - 1.0) * (f - 1.0) ** 2 / (2.0 * f - 1.0))
    return math.acos(c)


def test_normal_incidence_water_factor():
    # n / (n - 1) at normal incidence
    assert abs(correction_factor(1.33, 0.0) - 4.0303) < 1e-3
    assert abs(correction_factor(2.0, 0.0) - 2.0) < 1e-12


def test_factor_approaches_one_at_grazing():
    assert correction_factor(1.33, math.radians(89.9)) < 1.01


def test_factor_monotone_decreasing_in_alpha_and_n():
    alphas = [i * 0.015 for i in range(100)]
    for n in (1.1, 1.333, 1.5, 2.0):
        vals = [correction_factor(n, a) for a in alphas]
        assert all(v > 1.0 for v in vals)
        assert all(a > b for a, b in zip(vals, vals[1:]))
    for a in (0.0, 0.3, 0.6, 1.2):
        assert correction_factor(1.2, a) > correction_factor(1.4, a) > correction_factor(1.9, a)


def test_factor_rejects_bad_inputs():
    with pytest.raises(InvalidRefractiveIndex):
        correction_factor(1.0, 0.0)
    with pytest.raises(InvalidRefractiveIndex):
        correction_factor(0.9, 0.0)
    with pytest.raises(ValueError):
        correction_factor(1.33, math.pi / 2)
    with pytest.raises(ValueError):
        correction_factor(1.33, -0.1)


def test_opaque_passthrough():
    est = correct_height(raw(0.06037, alpha=0.4, t=1.5), get_liquid("milk"))
    assert est.h == 0.06037
    assert est.source is EstimateSource.DIRECT
    assert est.variance == DEFAULT_SIGMA_R**2
    assert est.timestamp == 1.5


def test_transparent_correction_recovers_static_table_pair():
    # 18.64 mm raw at the angle where f = 3.153 must read back as 58.77 mm.
    alpha = alpha_for_factor(1.333, 3.153)
    assert abs(correction_factor(1.333, alpha) - 3.153) < 1e-9
    est = correct_height(raw(0.01864, alpha=alpha), get_liquid("water"))
    assert est.source is EstimateSource.CORRECTED
    assert abs(est.h - 0.05877) < 1e-5


def test_variance_magnified_by_factor_squared():
    alpha = 0.35
    f = correction_factor(1.333, alpha)
    est = correct_height(raw(0.02, alpha=alpha), get_liquid("water"), sigma_r=0.0003)
    assert abs(est.variance - f * f * 0.0003**2) < 1e-18
    opaque = correct_height(raw(0.02, alpha=alpha), get_liquid("milk"), sigma_r=0.0003)
    assert abs(est.variance / opaque.variance - f * f) < 1e-9


def test_zero_raw_height_stays_zero():
    est = correct_height(raw(0.0, alpha=0.2), get_liquid("water"))
    assert est.h == 0.0


def test_correction_homogeneous_in_raw_height():
    a = correct_height(raw(0.01, alpha=0.3), get_liquid("olive_oil"))
    b = correct_height(raw(0.02, alpha=0.3), get_liquid("olive_oil"))
    assert abs(b.h - 2.0 * a.h) < 1e-15


def test_correct_height_rejects_bad_sigma():
    with pytest.raises(ValueError):
        correct_height(raw(0.01), get_liquid("milk"), sigma_r=0.0)


def test_liquid_spec_validation():
    with pytest.raises(InvalidRefractiveIndex):
        LiquidSpec("ghost", Opacity.TRANSPARENT)  # transparent needs n_l
    with pytest.raises(InvalidRefractiveIndex):
        LiquidSpec("flat", Opacity.TRANSPARENT, n_l=1.0)
    with pytest.raises(ValueError):
        LiquidSpec("smooth", Opacity.OPAQUE, surface_noise_scale=0.5)
    # opaque without n_l is the normal case
    assert LiquidSpec("paint", Opacity.OPAQUE).n_l is None


def test_presets():
    assert set(LIQUID_PRESETS) == {"water", "carbonated_water", "olive_oil",
                                   "milk", "orange_juice"}
    assert get_liquid("water").n_l == 1.333
    assert get_liquid("carbonated_water").surface_noise_scale == 2.0
    assert get_liquid("milk").opacity is Opacity.OPAQUE
    with pytest.raises(KeyError, match="presets"):
        get_liquid("mercury")


def test_height_estimate_validation():
    with pytest.raises(ValueError):
        HeightEstimate(h=-0.001, variance=1e-8, timestamp=0.0,
                       source=EstimateSource.DIRECT)
    with pytest.raises(ValueError):
        HeightEstimate(h=0.01, variance=0.0, timestamp=0.0,
                       source=EstimateSource.DIRECT)


def test_load_liquid_file(tmp_path):
    path = tmp_path / "syrup.yaml"
    path.write_text(yaml.safe_dump({"name": "syrup", "opacity": "transparent",
                                    "n_l": 1.49, "surface_noise_scale": 1.5}))
    liquid = load_liquid_file(str(path))
    assert liquid.name == "syrup" and liquid.n_l == 1.49
    assert liquid.surface_noise_scale == 1.5


def test_load_liquid_file_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("opacity: transparent\n")  # missing name
    with pytest.raises(ParseError):
        load_liquid_file(str(bad))
    notmap = tmp_path / "list.yaml"
    notmap.write_text("- a\n- b\n")
    with pytest.raises(ParseError):
        load_liquid_file(str(notmap))
    broken = tmp_path / "broken.yaml"
    broken.write_text("name: [unclosed\n")
    with pytest.raises(ParseError):
        load_liquid_file(str(broken))
