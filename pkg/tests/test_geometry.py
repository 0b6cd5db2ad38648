"""Geometry pipeline tests: plane/cylinder fits, height measurement, cloud IO."""

import math

import numpy as np
import pytest

from autopour import geometry
from autopour.errors import DegenerateInput, NoLiquidVisible, NoModelFound, ParseError
from autopour.geometry import (
    CylinderModel,
    PlaneModel,
    Point3,
    PointCloud,
    RansacConfig,
    extract_above_plane,
    fit_cylinder_ransac,
    fit_plane_ransac,
    load_cloud,
    measure_raw_height,
    save_cloud,
)

# Hand-built table plane for cylinder/height tests: z = -0.75, camera above.
TABLE = PlaneModel(normal=np.array([0.0, 0.0, 1.0]), offset=-0.75, inlier_count=0)


def make_wall(rng, n, center=(0.25, 0.0), radius=0.0375, z0=-0.75, height=0.12,
              half=False):
    if half:
        phi = math.pi + rng.uniform(-math.pi / 2, math.pi / 2, n)
    else:
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
    z = rng.uniform(z0, z0 + height, n)
    return np.column_stack(
        [center[0] + radius * np.cos(phi), center[1] + radius * np.sin(phi), z]
    )


# --- plane fitting ---------------------------------------------------------


def test_plane_fit_recovers_noisy_plane_with_outliers():
    # 900 points on y = 0.75 with 1 mm noise plus 10% box outliers.
    rng = np.random.default_rng(2)
    n_in = 900
    inliers = np.column_stack([
        rng.uniform(-0.5, 0.5, n_in),
        np.full(n_in, 0.75) + rng.normal(0.0, 0.001, n_in),
        rng.uniform(-1.5, -0.5, n_in),
    ])
    outliers = np.column_stack([
        rng.uniform(-0.5, 0.5, 100),
        rng.uniform(0.0, 0.7, 100),
        rng.uniform(-1.5, -0.5, 100),
    ])
    model = fit_plane_ransac(PointCloud(points=np.vstack([inliers, outliers])))
    assert abs(model.normal[1]) > math.cos(math.radians(1.0))
    assert abs(abs(model.offset) - 0.75) < 0.002
    assert model.inlier_count > 800


def test_plane_fit_three_exact_points():
    pts = np.array([[0.0, 0.0, -1.0], [1.0, 0.0, -1.0], [0.0, 1.0, -1.1]])
    model = fit_plane_ransac(PointCloud(points=pts))
    assert model.inlier_count == 3
    assert np.all(np.abs(model.signed_distance(pts)) < 1e-9)


def test_plane_fit_oriented_toward_camera():
    # Camera at the origin must land on the positive side.
    rng = np.random.default_rng(5)
    pts = np.column_stack([rng.uniform(-0.3, 0.3, 200), rng.uniform(-0.3, 0.3, 200),
                           np.full(200, -0.75)])
    model = fit_plane_ransac(PointCloud(points=pts))
    assert model.signed_distance(np.zeros((1, 3)))[0] > 0.0


def test_plane_fit_random_cube_finds_nothing():
    rng = np.random.default_rng(0)
    cloud = PointCloud(points=rng.uniform(0.0, 1.0, size=(100, 3)))
    with pytest.raises(NoModelFound):
        fit_plane_ransac(cloud, RansacConfig(min_inlier_ratio=0.8))


def test_plane_fit_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        fit_plane_ransac(PointCloud(points=np.zeros((2, 3))))
    line = np.outer(np.linspace(0.0, 1.0, 10), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(DegenerateInput):
        fit_plane_ransac(PointCloud(points=line))


def test_plane_fit_deterministic_per_seed():
    rng = np.random.default_rng(7)
    pts = np.column_stack([rng.uniform(-0.3, 0.3, 500), rng.uniform(-0.3, 0.3, 500),
                           np.full(500, -0.75) + rng.normal(0, 0.001, 500)])
    cloud = PointCloud(points=pts)
    a = fit_plane_ransac(cloud, RansacConfig(seed=3))
    b = fit_plane_ransac(cloud, RansacConfig(seed=3))
    assert np.array_equal(a.normal, b.normal)
    assert a.offset == b.offset and a.inlier_count == b.inlier_count


def test_plane_refit_keeps_its_own_inliers():
    rng = np.random.default_rng(11)
    pts = np.column_stack([rng.uniform(-0.3, 0.3, 800), rng.uniform(-0.3, 0.3, 800),
                           np.full(800, -0.75) + rng.normal(0, 0.001, 800)])
    cloud = PointCloud(points=pts)
    cfg = RansacConfig()
    model = fit_plane_ransac(cloud, cfg)
    recount = int(np.count_nonzero(np.abs(model.signed_distance(pts)) <= cfg.inlier_threshold))
    assert recount == model.inlier_count


# --- extract_above_plane ---------------------------------------------------


def test_extract_above_plane_strict_margin():
    pts = np.array([[0.0, 0.0, -0.75], [0.0, 0.0, -0.7], [0.0, 0.0, -0.8]])
    out = extract_above_plane(PointCloud(points=pts), TABLE, margin=0.0)
    # the on-plane point is excluded (strict inequality), the below point too
    assert len(out) == 1
    assert out.points[0, 2] == -0.7


def test_extract_above_plane_idempotent_and_order_preserving():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1.0, 0.0, size=(300, 3))
    cloud = PointCloud(points=pts, frame_id=4, timestamp=2.5)
    once = extract_above_plane(cloud, TABLE, margin=0.006)
    twice = extract_above_plane(once, TABLE, margin=0.006)
    assert np.array_equal(once.points, twice.points)
    assert once.frame_id == 4 and once.timestamp == 2.5
    # order preserved: the kept points appear in original relative order
    mask = TABLE.signed_distance(pts) > 0.006
    assert np.array_equal(once.points, pts[mask])


def test_extract_above_plane_all_below_gives_empty():
    pts = np.full((10, 3), [0.0, 0.0, -1.0])
    out = extract_above_plane(PointCloud(points=pts), TABLE, margin=0.0)
    assert len(out) == 0


# --- cylinder fitting ------------------------------------------------------


def test_cylinder_fit_noisy_full_wall():
    rng = np.random.default_rng(3)
    wall = make_wall(rng, 1500) + rng.normal(0.0, 0.001, (1500, 3))
    model = fit_cylinder_ransac(PointCloud(points=wall), TABLE)
    assert abs(model.radius - 0.0375) < 0.0015
    assert abs(np.linalg.norm(model.axis_direction) - 1.0) < 1e-12
    assert abs(float(model.axis_direction @ TABLE.normal)) > 1.0 - 1e-12
    assert abs(model.height - 0.12) < 0.005


def test_cylinder_fit_noiseless_half_shell_near_exact():
    # The camera only ever sees one side of the cup.
    rng = np.random.default_rng(4)
    half = make_wall(rng, 800, half=True)
    model = fit_cylinder_ransac(PointCloud(points=half), TABLE)
    assert abs(model.radius - 0.0375) < 1e-4
    assert abs(model.axis_point.x - 0.25) < 1e-4
    assert abs(model.axis_point.y - 0.0) < 1e-4


def test_cylinder_fit_flat_patch_finds_nothing():
    rng = np.random.default_rng(1)
    flat = np.column_stack([rng.uniform(0.1, 0.4, 500), rng.uniform(-0.15, 0.15, 500),
                            np.full(500, -0.69)])
    with pytest.raises(NoModelFound):
        fit_cylinder_ransac(PointCloud(points=flat), TABLE)


def test_cylinder_fit_deterministic_per_seed():
    rng = np.random.default_rng(8)
    wall = make_wall(rng, 600) + rng.normal(0.0, 0.001, (600, 3))
    cloud = PointCloud(points=wall)
    a = fit_cylinder_ransac(cloud, TABLE, RansacConfig(seed=2))
    b = fit_cylinder_ransac(cloud, TABLE, RansacConfig(seed=2))
    assert a.radius == b.radius
    assert a.axis_point == b.axis_point
    assert a.inlier_count == b.inlier_count


def test_cylinder_fit_degenerate():
    with pytest.raises(DegenerateInput):
        fit_cylinder_ransac(PointCloud(points=np.zeros((1, 3))), TABLE)


# --- measure_raw_height ----------------------------------------------------

CUP = CylinderModel(axis_point=Point3(0.25, 0.0, -0.75),
                    axis_direction=np.array([0.0, 0.0, 1.0]),
                    radius=0.0375, height=0.12, inlier_count=1)


def surface_points(rng, n, radius, height, center=(0.25, 0.0), z0=-0.75):
    rad = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    th = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.column_stack([center[0] + rad * np.cos(th), center[1] + rad * np.sin(th),
                            np.full(n, z0 + height)])


def test_measure_raw_height_means_selected_points():
    rng = np.random.default_rng(6)
    inside = surface_points(rng, 100, 0.029, 0.060)   # within 0.8 * r = 30 mm
    ring = surface_points(rng, 50, 0.0375, 0.060)     # some fall outside 30 mm
    ring = ring[CUP.radial_distance(ring) > 0.8 * CUP.radius]
    wall = make_wall(rng, 200)
    cloud = PointCloud(points=np.vstack([inside, ring, wall]), timestamp=3.25)
    m = measure_raw_height(cloud, CUP, TABLE, diameter_scale=0.8)
    assert m.point_count == 100
    assert abs(m.h_r - 0.060) < 1e-12
    assert m.timestamp == 3.25
    # alpha anchored on the axis at the measured height
    assert abs(m.alpha - math.atan2(0.25, 0.69)) < 1e-9


def test_measure_raw_height_overhead_camera_alpha_zero():
    cup = CylinderModel(axis_point=Point3(0.0, 0.0, -0.75),
                        axis_direction=np.array([0.0, 0.0, 1.0]),
                        radius=0.0375, height=0.12, inlier_count=1)
    rng = np.random.default_rng(9)
    pts = surface_points(rng, 80, 0.02, 0.050, center=(0.0, 0.0))
    m = measure_raw_height(PointCloud(points=pts), cup, TABLE)
    assert m.alpha < 1e-9


def test_measure_raw_height_empty_region():
    rng = np.random.default_rng(10)
    wall_only = make_wall(rng, 300)
    with pytest.raises(NoLiquidVisible):
        measure_raw_height(PointCloud(points=wall_only), CUP, TABLE)


def test_measure_raw_height_clamps_to_zero():
    # An empty cup scatters bottom points slightly below the fitted table.
    rng = np.random.default_rng(12)
    pts = surface_points(rng, 60, 0.02, -0.002)
    m = measure_raw_height(PointCloud(points=pts), CUP, TABLE)
    assert m.h_r == 0.0


def test_measure_raw_height_rejects_bad_scale():
    with pytest.raises(ValueError):
        measure_raw_height(PointCloud(points=np.zeros((4, 3))), CUP, TABLE,
                           diameter_scale=1.5)


def test_raw_height_invariant_under_scene_rotation():
    # Rotating the whole scene about the vertical axis must not move h_r:
    # heights are elevations above the fitted plane, not coordinates.
    from autopour import optics, sim

    state = sim.WorldState(liquid=optics.get_liquid("milk"), cup=sim.get_cup("blue"),
                           bottle=sim.get_bottle("small"), bottle_volume=400.0,
                           cup_height=0.060, wrist_angle=0.0, time=0.0)
    sensor = sim.SensorModel(sigma_point=0.0)
    cloud = sim.render_cloud(state, sensor, rng_seed=7)
    R = sensor.camera_rotation()
    th = math.radians(40.0)
    Rz = np.array([[math.cos(th), -math.sin(th), 0.0],
                   [math.sin(th), math.cos(th), 0.0],
                   [0.0, 0.0, 1.0]])
    M = R @ Rz @ R.T  # world-vertical rotation expressed in the camera frame

    def h_of(points):
        c = PointCloud(points=points)
        plane = fit_plane_ransac(c)
        above = extract_above_plane(c, plane)
        cyl = fit_cylinder_ransac(above, plane)
        return measure_raw_height(c, cyl, plane).h_r

    assert abs(h_of(cloud.points) - h_of(cloud.points @ M.T)) < 1e-9


# --- point-cloud file format ------------------------------------------------


def test_cloud_file_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    cloud = PointCloud(points=rng.uniform(-1.0, 1.0, size=(50, 3)))
    path = tmp_path / "frame.cloud"
    save_cloud(cloud, str(path))
    loaded = load_cloud(str(path))
    assert len(loaded) == 50
    assert np.allclose(loaded.points, cloud.points, atol=1e-9)


def test_load_cloud_skips_comments_and_blanks(tmp_path):
    path = tmp_path / "c.cloud"
    path.write_text("# a comment\n\nPOINTS 2\n0 0 -0.75\n# mid comment\n0.1 0.2 -0.7\n")
    loaded = load_cloud(str(path))
    assert len(loaded) == 2


@pytest.mark.parametrize("text,fragment", [
    ("0 0 0\n", "line 1"),                      # data before header
    ("POINTS x\n", "line 1"),                   # non-integer count
    ("POINTS 1\n1 2\n", "line 2"),              # wrong coordinate count
    ("POINTS 1\n1 2 z\n", "line 2"),            # non-numeric coordinate
    ("POINTS 3\n1 2 3\n", "declares 3"),        # count mismatch
    ("# only comments\n", "line 1"),            # missing header
])
def test_load_cloud_errors(tmp_path, text, fragment):
    path = tmp_path / "bad.cloud"
    path.write_text(text)
    with pytest.raises(ParseError, match=fragment):
        load_cloud(str(path))


def test_point_cloud_shape_validation():
    with pytest.raises(ValueError):
        PointCloud(points=np.zeros((4, 2)))
    with pytest.raises(ValueError):
        PointCloud(points=np.zeros((4, 3)), timestamp=-1.0)
